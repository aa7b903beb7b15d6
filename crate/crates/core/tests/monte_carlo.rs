use quantum_kalman::model::{oscillator_to_general, OscillatorModel};
use quantum_kalman::riccati::{integrate_riccati, FilterSynthesis};
use quantum_kalman::simulate::{gain_perturbation_test, simulate_bundle, SimulationConfig};

fn synthesis(nu: f64, sigma0: f64, t_end: f64) -> FilterSynthesis {
    let osc = OscillatorModel {
        omega: 1.0,
        gamma: 1.0,
        nu,
        sigma0,
        hbar: 1.0,
    };
    let (sig, ch) = oscillator_to_general(&osc).unwrap();
    integrate_riccati(&sig, &ch, t_end, 0.01).unwrap()
}

#[test]
fn residual_matches_riccati_trace() {
    let synth = synthesis(1.0, 3.0, 2.0);
    let bundle = simulate_bundle(&synth, &SimulationConfig::new(1e-3, 2.0, 20_000, 314)).unwrap();
    let z = bundle.z_scores();
    for t in [0.5, 1.0, 2.0] {
        let i = bundle.index_of(t).unwrap();
        assert!(z[i].unwrap().abs() <= 3.0, "t = {t}: z = {:?}", z[i]);
    }
}

#[test]
fn zero_temperature_error_floor() {
    let synth = synthesis(0.0, 1.0, 1.0);
    let bundle = simulate_bundle(&synth, &SimulationConfig::new(1e-3, 1.0, 20_000, 2718)).unwrap();
    let i = bundle.index_of(1.0).unwrap();
    let floor = 1.0 / (2.0 * std::f64::consts::E - 1.0);
    let se = bundle.standard_error[i].unwrap();
    assert!((bundle.empirical_trace[i] - floor).abs() <= 3.0 * se);
    assert!(bundle.empirical_trace[i] > 0.2);
}

#[test]
fn halving_dt_moves_less_than_one_standard_error() {
    let synth = synthesis(1.0, 3.0, 3.0);
    let mut coarse = SimulationConfig::new(1e-3, 3.0, 20_000, 99);
    coarse.noise_substeps = 2;
    let fine = SimulationConfig::new(5e-4, 3.0, 20_000, 99);
    let a = simulate_bundle(&synth, &coarse).unwrap();
    let b = simulate_bundle(&synth, &fine).unwrap();
    for t in [0.5, 1.0, 2.0, 3.0] {
        let i = a.index_of(t).unwrap();
        let se = a.standard_error[i].unwrap();
        let shift = (a.empirical_trace[i] - b.empirical_trace[i]).abs();
        assert!(shift < se, "t = {t}: shift {shift:.3e}, SE {se:.3e}");
    }
}

#[test]
fn synthesized_gain_is_locally_optimal() {
    let synth = synthesis(1.0, 3.0, 3.0);
    let cfg = SimulationConfig::new(1e-3, 3.0, 20_000, 4242);
    for eps in [-0.5, -0.2, -0.1, 0.1, 0.2, 0.5] {
        let r = gain_perturbation_test(&synth, &cfg, eps).unwrap();
        assert!(r.perturbed > r.baseline, "ε = {eps}: {r:?}");
        assert!(r.significance > 2.0, "ε = {eps}: {r:?}");
    }
}
