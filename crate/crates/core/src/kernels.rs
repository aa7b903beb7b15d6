//! Gaussian transition kernels of the coherent filter.
//!
//! Between two instants `s < t` the filter output evolves as an affine
//! Gaussian map `x(t) = M x(s) + ξ`, `ξ ~ CN(0, V)`. Composition of such
//! kernels is the Markov (Chapman–Kolmogorov) property; their characteristic
//! functions give the normalization and positive-definiteness properties in
//! numerically checkable form.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::{min_eigenvalue_hermitian, ComplexMatrix};
use crate::riccati::FilterSynthesis;

/// Largest u-set accepted by [`cf_positivity_gram`].
pub const MAX_GRAM_POINTS: usize = 32;

const ADJACENCY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    pub s: f64,
    pub t: f64,
    /// Mean map `x(s) ↦ M x(s)`.
    pub m: ComplexMatrix,
    /// Transition covariance.
    pub v: ComplexMatrix,
}

impl GaussianKernel {
    /// `(I, 0)` on the empty interval `[t, t]`.
    pub fn identity(n: usize, t: f64) -> Self {
        Self {
            s: t,
            t,
            m: ComplexMatrix::identity(n),
            v: ComplexMatrix::zeros(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.m.rows()
    }

    /// Mean `M·x_s` as a column.
    pub fn mean(&self, x_s: &[Complex64]) -> Result<ComplexMatrix> {
        if x_s.len() != self.n() {
            return Err(Error::Dimension(format!(
                "state has {} entries, kernel dimension is {}",
                x_s.len(),
                self.n()
            )));
        }
        Ok(&self.m * column(x_s))
    }
}

fn column(v: &[Complex64]) -> ComplexMatrix {
    ComplexMatrix::from_row_major(v.len(), 1, v).expect("column shape")
}

fn aligned_index(synth: &FilterSynthesis, t: f64) -> Result<usize> {
    synth
        .index_of(t)
        .ok_or_else(|| Error::GridMisaligned(format!("t = {t} is not a synthesis grid point")))
}

/// Transition kernel of the filter on `[s, t]`.
///
/// `M` solves `dM/dτ = −B M`, `M(s) = I`; `V` solves
/// `dV/dτ = −B V − V B⁺ + K (N+I) K⁺`, `V(s) = 0`. Both use RK4 with the
/// synthesis step, taking `B` and `K` at the half-step points the synthesis
/// already computed. `s` and `t` must be grid points.
pub fn kernel_from_filter(synth: &FilterSynthesis, s: f64, t: f64) -> Result<GaussianKernel> {
    let horizon = synth.horizon();
    if s < 0.0 || t > horizon * (1.0 + 1e-12) || s > t {
        return Err(Error::OutsideGrid {
            start: s,
            end: t,
            horizon,
        });
    }
    let i0 = aligned_index(synth, s)?;
    let i1 = aligned_index(synth, t)?;
    let n = synth.n();
    let mut m = ComplexMatrix::identity(n);
    let mut v = ComplexMatrix::zeros(n, n);
    let h = synth.step;
    for i in i0..i1 {
        let coeffs = synth.coefficients_for_step(synth.times[i], synth.times[i + 1]);
        let stage = |p: &ComplexMatrix| {
            let k = coeffs.gain(p);
            let b = coeffs.drift(&k);
            (b, coeffs.innovation_source(p))
        };
        let (b0, q0) = stage(&synth.fine_p[2 * i]);
        let (bh, qh) = stage(&synth.fine_p[2 * i + 1]);
        let (b1, q1) = stage(&synth.fine_p[2 * i + 2]);

        let dm = |b: &ComplexMatrix, m: &ComplexMatrix| -(b * m);
        let dv = |b: &ComplexMatrix, q: &ComplexMatrix, v: &ComplexMatrix| {
            -(b * v) - v * b.adjoint() + q
        };

        let km1 = dm(&b0, &m);
        let kv1 = dv(&b0, &q0, &v);
        let km2 = dm(&bh, &(&m + km1.scale(h / 2.0)));
        let kv2 = dv(&bh, &qh, &(&v + kv1.scale(h / 2.0)));
        let km3 = dm(&bh, &(&m + km2.scale(h / 2.0)));
        let kv3 = dv(&bh, &qh, &(&v + kv2.scale(h / 2.0)));
        let km4 = dm(&b1, &(&m + km3.scale(h)));
        let kv4 = dv(&b1, &q1, &(&v + kv3.scale(h)));

        m = &m + (km1 + km2.scale(2.0) + km3.scale(2.0) + km4).scale(h / 6.0);
        v = (&v + (kv1 + kv2.scale(2.0) + kv3.scale(2.0) + kv4).scale(h / 6.0)).hermitian_part();
    }
    Ok(GaussianKernel {
        s: synth.times[i0],
        t: synth.times[i1],
        m,
        v,
    })
}

/// Composition `k₂ ∘ k₁`: `M = M₂M₁`, `V = V₂ + M₂V₁M₂⁺`.
pub fn compose(k1: &GaussianKernel, k2: &GaussianKernel) -> Result<GaussianKernel> {
    let scale = k1.t.abs().max(k2.s.abs()).max(1.0);
    if (k1.t - k2.s).abs() > ADJACENCY_TOL * scale {
        return Err(Error::NotAdjacent {
            first_end: k1.t,
            second_start: k2.s,
        });
    }
    if k1.n() != k2.n() {
        return Err(Error::Dimension("kernels have different dimensions".into()));
    }
    Ok(GaussianKernel {
        s: k1.s,
        t: k2.t,
        m: &k2.m * &k1.m,
        v: (&k2.v + &k2.m * &k1.v * k2.m.adjoint()).hermitian_part(),
    })
}

/// `‖M₀₂ − M₁₂M₀₁‖_F + ‖V₀₂ − (V₁₂ + M₁₂V₀₁M₁₂⁺)‖_F` with each kernel built
/// independently from the synthesis.
pub fn chapman_kolmogorov_residual(
    synth: &FilterSynthesis,
    t0: f64,
    t1: f64,
    t2: f64,
) -> Result<f64> {
    if !(t0 <= t1 && t1 <= t2) {
        return Err(Error::InvalidParameter(format!(
            "split points must be ordered, got {t0}, {t1}, {t2}"
        )));
    }
    let k01 = kernel_from_filter(synth, t0, t1)?;
    let k12 = kernel_from_filter(synth, t1, t2)?;
    let k02 = kernel_from_filter(synth, t0, t2)?;
    let composed = compose(&k01, &k12)?;
    Ok((&k02.m - &composed.m).frobenius_norm() + (&k02.v - &composed.v).frobenius_norm())
}

/// `φ(u) = exp(i(u⁺μ + μ⁺u) − u⁺Vu)` with `μ = M x_s`.
pub fn characteristic_function(
    k: &GaussianKernel,
    x_s: &[Complex64],
    u: &[Complex64],
) -> Result<Complex64> {
    let mu = k.mean(x_s)?;
    if u.len() != k.n() {
        return Err(Error::Dimension(format!(
            "argument has {} entries, kernel dimension is {}",
            u.len(),
            k.n()
        )));
    }
    let u = column(u);
    let phase = 2.0 * (u.adjoint() * &mu)[(0, 0)].re;
    let spread = (u.adjoint() * &k.v * &u)[(0, 0)].re;
    Ok(Complex64::new(-spread, phase).exp())
}

/// Gram matrix `Γ[k,l] = φ(u_k − u_l)`.
pub fn cf_gram_matrix(
    k: &GaussianKernel,
    x_s: &[Complex64],
    u_list: &[Vec<Complex64>],
) -> Result<ComplexMatrix> {
    if u_list.is_empty() || u_list.len() > MAX_GRAM_POINTS {
        return Err(Error::InvalidParameter(format!(
            "need between 1 and {MAX_GRAM_POINTS} points, got {}",
            u_list.len()
        )));
    }
    let size = u_list.len();
    let mut gram = ComplexMatrix::zeros(size, size);
    for a in 0..size {
        for b in 0..size {
            let diff: Vec<Complex64> = u_list[a]
                .iter()
                .zip(&u_list[b])
                .map(|(x, y)| x - y)
                .collect();
            if u_list[a].len() != u_list[b].len() {
                return Err(Error::Dimension("points have different lengths".into()));
            }
            gram[(a, b)] = characteristic_function(k, x_s, &diff)?;
        }
    }
    Ok(gram)
}

/// Smallest eigenvalue of the characteristic-function Gram matrix.
pub fn cf_positivity_gram(
    k: &GaussianKernel,
    x_s: &[Complex64],
    u_list: &[Vec<Complex64>],
) -> Result<f64> {
    min_eigenvalue_hermitian(&cf_gram_matrix(k, x_s, u_list)?)
}

/// `|∫ exp(−|x|²/C)/(πC) d²x − 1|` over the square `[−w, w]²` by the
/// tensor-product midpoint rule.
pub fn coherent_measure_normalization_residual(
    c: f64,
    half_width: f64,
    points_per_axis: usize,
) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "commutator scale must be positive, got {c}"
        )));
    }
    if points_per_axis == 0 {
        return Err(Error::InvalidParameter(
            "need at least one quadrature point".into(),
        ));
    }
    if half_width <= 0.0 {
        return Ok(1.0);
    }
    // The density factorizes: the square integral is the square of a line integral.
    let h = 2.0 * half_width / points_per_axis as f64;
    let line: f64 = (0..points_per_axis)
        .map(|i| {
            let x = -half_width + (i as f64 + 0.5) * h;
            (-x * x / c).exp()
        })
        .sum::<f64>()
        * h;
    Ok((line * line / (std::f64::consts::PI * c) - 1.0).abs())
}

/// Largest Chapman–Kolmogorov residual over `splits` random ordered triples
/// of grid points.
pub fn chapman_kolmogorov_sweep(synth: &FilterSynthesis, splits: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last = synth.len() - 1;
    let mut worst: f64 = 0.0;
    for _ in 0..splits {
        let mut idx = [0usize; 3].map(|_| rng.random_range(0..=last));
        idx.sort_unstable();
        let [t0, t1, t2] = idx.map(|i| synth.times[i]);
        worst = worst.max(chapman_kolmogorov_residual(synth, t0, t1, t2)?);
    }
    Ok(worst)
}

/// Smallest Gram eigenvalue over `draws` random kernels of `synth`, each with
/// a random conditioning point and a random u-set of 2 to 16 points.
pub fn bochner_sweep(synth: &FilterSynthesis, draws: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last = synth.len() - 1;
    if last == 0 {
        return Err(Error::InvalidParameter(
            "synthesis grid has a single point".into(),
        ));
    }
    let mut worst = f64::INFINITY;
    for _ in 0..draws {
        let a = rng.random_range(0..last);
        let b = rng.random_range(a + 1..=last);
        let kernel = kernel_from_filter(synth, synth.times[a], synth.times[b])?;
        let n = kernel.n();
        let point = |r: &mut ChaCha8Rng, w: f64| {
            Complex64::new(r.random_range(-w..w), r.random_range(-w..w))
        };
        let x: Vec<Complex64> = (0..n).map(|_| point(&mut rng, 3.0)).collect();
        let count = rng.random_range(2..=16);
        let spread = rng.random_range(0.1..3.0);
        let u: Vec<Vec<Complex64>> = (0..count)
            .map(|_| (0..n).map(|_| point(&mut rng, spread)).collect())
            .collect();
        worst = worst.min(cf_positivity_gram(&kernel, &x, &u)?);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{oscillator_to_general, ChannelModel, OscillatorModel, SignalModel};
    use crate::riccati::integrate_riccati;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Scalar model started at its algebraic fixed point, so that `B` and
    /// `K` are constant: `A = a`, `J = 1`, `Q = q`, `F = 1`, `N = T = 0`.
    fn constant_gain_model(a: Complex64, q: f64) -> (SignalModel, ChannelModel, f64) {
        let p_inf = -a.re + (a.re * a.re + q).sqrt();
        let s = ComplexMatrix::real_scalar;
        let sig = SignalModel::new(
            ComplexMatrix::scalar(a),
            s(1.0),
            s(q),
            s(p_inf),
            s(0.0),
            1.0,
        )
        .unwrap();
        let ch = ChannelModel::new(&sig, s(1.0), s(0.0), s(0.0), s(0.0)).unwrap();
        (sig, ch, p_inf)
    }

    #[test]
    fn identity_kernel_on_empty_interval() {
        let (sig, ch) = oscillator_to_general(&OscillatorModel {
            omega: 1.0,
            gamma: 1.0,
            nu: 1.0,
            sigma0: 3.0,
            hbar: 1.0,
        })
        .unwrap();
        let synth = integrate_riccati(&sig, &ch, 1.0, 0.01).unwrap();
        let k = kernel_from_filter(&synth, 0.3, 0.3).unwrap();
        assert_eq!(k.m, ComplexMatrix::identity(1));
        assert_eq!(k.v, ComplexMatrix::zeros(1, 1));
        assert!(kernel_from_filter(&synth, 0.3, 1.5).is_err());
        assert!(kernel_from_filter(&synth, 0.5, 0.3).is_err());
        assert!(kernel_from_filter(&synth, 0.305, 0.5).is_err());
    }

    #[test]
    fn constant_coefficient_closed_forms() {
        let a = c(0.4, 1.3);
        let (sig, ch, p_inf) = constant_gain_model(a, 2.0);
        let synth = integrate_riccati(&sig, &ch, 2.0, 0.01).unwrap();
        let b = a + p_inf;
        let q = p_inf * p_inf;
        for &(s, t) in &[(0.0, 0.5), (0.2, 1.7), (1.0, 2.0)] {
            let k = kernel_from_filter(&synth, s, t).unwrap();
            let tau: f64 = t - s;
            let m_exact = (-b * tau).exp();
            let v_exact = q * (1.0 - (-2.0 * b.re * tau).exp()) / (2.0 * b.re);
            assert!((k.m[(0, 0)] - m_exact).norm() < 1e-8);
            assert!((k.v[(0, 0)].re - v_exact).abs() < 1e-8);
        }
    }

    #[test]
    fn half_interval_kernels_compose_to_closed_form() {
        let a = c(0.7, -0.6);
        let (sig, ch, p_inf) = constant_gain_model(a, 1.0);
        let synth = integrate_riccati(&sig, &ch, 2.0, 0.01).unwrap();
        let first = kernel_from_filter(&synth, 0.0, 1.0).unwrap();
        let second = kernel_from_filter(&synth, 1.0, 2.0).unwrap();
        let full = compose(&first, &second).unwrap();
        let b = a + p_inf;
        let q = p_inf * p_inf;
        assert!((full.m[(0, 0)] - (-b * 2.0).exp()).norm() < 1e-10);
        let v_exact = q * (1.0 - (-4.0 * b.re).exp()) / (2.0 * b.re);
        assert!((full.v[(0, 0)].re - v_exact).abs() < 1e-10);
    }

    #[test]
    fn zero_gain_kernel_is_deterministic() {
        let nu = 0.8;
        let osc = OscillatorModel {
            omega: 2.0,
            gamma: 1.0,
            nu,
            sigma0: nu,
            hbar: 1.0,
        };
        let (sig, ch) = oscillator_to_general(&osc).unwrap();
        let synth = integrate_riccati(&sig, &ch, 2.0, 0.0025).unwrap();
        let k = kernel_from_filter(&synth, 0.5, 1.5).unwrap();
        assert!(k.v.frobenius_norm() < 1e-12);
        assert!(
            (k.m[(0, 0)] - (-osc.alpha()).exp()).norm() < 1e-10,
            "{:?} {:?}",
            k.m,
            (-osc.alpha()).exp()
        );
    }

    #[test]
    fn compose_rejects_gaps() {
        let k1 = GaussianKernel {
            s: 0.0,
            t: 1.0,
            m: ComplexMatrix::identity(1),
            v: ComplexMatrix::zeros(1, 1),
        };
        let k2 = GaussianKernel {
            s: 1.1,
            t: 2.0,
            ..k1.clone()
        };
        assert!(matches!(compose(&k1, &k2), Err(Error::NotAdjacent { .. })));
        let id = GaussianKernel::identity(1, 1.0);
        assert_eq!(compose(&k1, &id).unwrap(), k1);
    }

    #[test]
    fn chapman_kolmogorov_on_oscillator() {
        let osc = OscillatorModel {
            omega: 1.0,
            gamma: 1.0,
            nu: 1.0,
            sigma0: 3.0,
            hbar: 1.0,
        };
        let (sig, ch) = oscillator_to_general(&osc).unwrap();
        let synth = integrate_riccati(&sig, &ch, 3.0, 0.01).unwrap();
        assert!(chapman_kolmogorov_residual(&synth, 0.0, 1.3, 3.0).unwrap() < 1e-8);
        assert_eq!(
            chapman_kolmogorov_residual(&synth, 0.4, 0.4, 2.0).unwrap(),
            0.0
        );
        assert!(chapman_kolmogorov_residual(&synth, 1.0, 0.5, 2.0).is_err());
    }

    #[test]
    fn characteristic_function_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = GaussianKernel {
            s: 0.0,
            t: 1.0,
            m: ComplexMatrix::from_fn(2, 2, |_, _| {
                c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            }),
            v: ComplexMatrix::from_real_rows(&[[1.0, 0.2], [0.2, 0.5]]),
        };
        let x = [c(0.3, -1.0), c(2.0, 0.1)];
        assert_eq!(
            characteristic_function(&k, &x, &[c(0.0, 0.0); 2]).unwrap(),
            c(1.0, 0.0)
        );

        let det = GaussianKernel::identity(1, 0.0);
        let xs = [c(0.7, -0.2)];
        let u = [c(1.3, 0.4)];
        let phi = characteristic_function(&det, &xs, &u).unwrap();
        let expected = c(0.0, 2.0 * (u[0].conj() * xs[0]).re).exp();
        assert!((phi - expected).norm() < 1e-15);
        assert!((phi.norm() - 1.0).abs() < 1e-15);

        let unit = GaussianKernel {
            v: ComplexMatrix::real_scalar(1.0),
            ..GaussianKernel::identity(1, 0.0)
        };
        let phi = characteristic_function(&unit, &[c(0.0, 0.0)], &[c(1.0, 0.0)]).unwrap();
        assert!((phi - c((-1.0f64).exp(), 0.0)).norm() < 1e-15);
    }

    #[test]
    fn gram_examples() {
        let k = GaussianKernel {
            v: ComplexMatrix::real_scalar(0.7),
            ..GaussianKernel::identity(1, 0.0)
        };
        let xs = [c(0.5, 0.5)];
        let one = cf_positivity_gram(&k, &xs, &[vec![c(0.3, 0.1)]]).unwrap();
        assert!((one - 1.0).abs() < 1e-15);

        let u = c(0.8, -0.4);
        let phi = characteristic_function(&k, &xs, &[u]).unwrap();
        let two = cf_positivity_gram(&k, &xs, &[vec![c(0.0, 0.0)], vec![u]]).unwrap();
        assert!((two - (1.0 - phi.norm())).abs() < 1e-14);

        let too_many: Vec<Vec<Complex64>> = (0..33).map(|i| vec![c(i as f64, 0.0)]).collect();
        assert!(cf_positivity_gram(&k, &xs, &too_many).is_err());
        assert!(cf_positivity_gram(&k, &xs, &[]).is_err());
    }

    #[test]
    fn normalization_quadrature() {
        assert!(coherent_measure_normalization_residual(1.0, 6.0, 400).unwrap() <= 1e-6);
        assert!(coherent_measure_normalization_residual(0.25, 4.0, 400).unwrap() <= 1e-6);
        assert_eq!(
            coherent_measure_normalization_residual(1.0, 0.0, 400).unwrap(),
            1.0
        );
        let tiny = coherent_measure_normalization_residual(1.0, 1e-4, 10).unwrap();
        assert!(tiny > 0.99);
        let coarse = coherent_measure_normalization_residual(1.0, 1.0, 100).unwrap();
        let wide = coherent_measure_normalization_residual(1.0, 3.0, 100).unwrap();
        assert!(wide < coarse);
        assert!(coherent_measure_normalization_residual(0.0, 1.0, 10).is_err());
        assert!(coherent_measure_normalization_residual(-1.0, 1.0, 10).is_err());
    }

    fn arb_complex() -> impl Strategy<Value = Complex64> {
        (-1.5f64..1.5, -1.5f64..1.5).prop_map(|(a, b)| c(a, b))
    }

    fn arb_kernel(n: usize) -> impl Strategy<Value = GaussianKernel> {
        (
            prop::collection::vec(arb_complex(), n * n),
            prop::collection::vec(arb_complex(), n * n),
        )
            .prop_map(move |(m, l)| {
                let m = ComplexMatrix::from_row_major(n, n, &m).unwrap();
                let l = ComplexMatrix::from_row_major(n, n, &l).unwrap();
                GaussianKernel {
                    s: 0.0,
                    t: 1.0,
                    m,
                    v: (&l * l.adjoint()).hermitian_part(),
                }
            })
    }

    fn shift(k: GaussianKernel, by: f64) -> GaussianKernel {
        GaussianKernel {
            s: k.s + by,
            t: k.t + by,
            ..k
        }
    }

    proptest! {
        #[test]
        fn composition_is_associative_and_closed(
            (k1, k2, k3) in (1usize..=4).prop_flat_map(|n| (arb_kernel(n), arb_kernel(n), arb_kernel(n)))
        ) {
            let (k2, k3) = (shift(k2, 1.0), shift(k3, 2.0));
            let left = compose(&compose(&k1, &k2).unwrap(), &k3).unwrap();
            let right = compose(&k1, &compose(&k2, &k3).unwrap()).unwrap();
            let scale = 1.0 + left.m.frobenius_norm() + left.v.frobenius_norm();
            prop_assert!((&left.m - &right.m).frobenius_norm() <= 1e-12 * scale);
            prop_assert!((&left.v - &right.v).frobenius_norm() <= 1e-12 * scale);
            let min = min_eigenvalue_hermitian(&left.v).unwrap();
            prop_assert!(min >= -1e-10 * left.v.frobenius_norm());
        }

        #[test]
        fn cf_bounded_and_conjugate_symmetric(
            (k, x, u) in (1usize..=4).prop_flat_map(|n| (
                arb_kernel(n),
                prop::collection::vec(arb_complex(), n),
                prop::collection::vec(arb_complex(), n),
            ))
        ) {
            let phi = characteristic_function(&k, &x, &u).unwrap();
            prop_assert!(phi.norm() <= 1.0 + 1e-15);
            let neg: Vec<Complex64> = u.iter().map(|z| -z).collect();
            let phi_neg = characteristic_function(&k, &x, &neg).unwrap();
            prop_assert!((phi_neg - phi.conj()).norm() <= 1e-14);
        }

        #[test]
        fn gram_is_positive(
            (k, x, us) in (1usize..=3).prop_flat_map(|n| (
                arb_kernel(n),
                prop::collection::vec(arb_complex(), n),
                prop::collection::vec(prop::collection::vec(arb_complex(), n), 16),
            ))
        ) {
            let gram = cf_gram_matrix(&k, &x, &us).unwrap();
            prop_assert!(crate::matrix::hermitian_residual(&gram).unwrap() <= 1e-13);
            for i in 0..us.len() {
                prop_assert!((gram[(i, i)] - c(1.0, 0.0)).norm() <= 1e-15);
            }
            prop_assert!(min_eigenvalue_hermitian(&gram).unwrap() >= -1e-10);
        }
    }
}
