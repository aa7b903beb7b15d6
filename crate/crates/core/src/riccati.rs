//! Optimal filter synthesis.
//!
//! The coherent filter driven by the heterodyned output `y = ŷ + ŵ` is
//!
//! ```text
//! dx = −B x dt + K dy,     B = A + K F,     K = (P F⁺ + J T⁺)(N + I)⁻¹
//! ```
//!
//! where the a posteriori correlation `P` obeys the matrix Riccati equation
//!
//! ```text
//! dP/dt = J Q J⁺ − A P − P A⁺ − (P F⁺ + J T⁺)(N + I)⁻¹(F P + T J⁺),   P(0) = R₀.
//! ```
//!
//! [`integrate_riccati`] solves it together with three linear companions:
//! the unconditional correlation `R`, the estimate covariance `G_cl` and the
//! filter commutator matrix `C`. Integration is classical fixed-step RK4; a
//! second pass at half the step supplies both the reported values and a
//! Richardson estimate of the global error.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::matrix::{min_eigenvalue_hermitian, solve_hpd, ComplexMatrix};
use crate::model::{ChannelModel, ModelSchedule, SignalModel};

/// Positivity tolerance for `P`, relative to its norm.
pub const POSITIVITY_TOL: f64 = 1e-8;

/// `K = (P F⁺ + J T⁺)(N + I)⁻¹`.
pub fn gain(p: &ComplexMatrix, sig: &SignalModel, ch: &ChannelModel) -> Result<ComplexMatrix> {
    check_posterior(p, sig)?;
    let x = p
        .try_mul(&ch.f.adjoint())?
        .try_add(&(&sig.j * ch.t.adjoint()))?;
    // (N+I) K⁺ = X⁺
    let k_adj = solve_hpd(&ch.heterodyne_covariance(), &x.adjoint())?;
    Ok(k_adj.adjoint())
}

/// `B = A + K F`.
pub fn filter_drift(
    a: &ComplexMatrix,
    k: &ComplexMatrix,
    f: &ComplexMatrix,
) -> Result<ComplexMatrix> {
    a.try_add(&k.try_mul(f)?)
}

fn check_posterior(p: &ComplexMatrix, sig: &SignalModel) -> Result<()> {
    if p.shape() != (sig.n(), sig.n()) {
        return Err(Error::Dimension(format!(
            "posterior is {:?}, expected {}x{}",
            p.shape(),
            sig.n(),
            sig.n()
        )));
    }
    Ok(())
}

/// Right-hand side of the Riccati equation at `P`.
pub fn riccati_rhs(
    p: &ComplexMatrix,
    sig: &SignalModel,
    ch: &ChannelModel,
) -> Result<ComplexMatrix> {
    let coeffs = Coefficients::new(sig, ch)?;
    check_posterior(p, sig)?;
    Ok(coeffs.riccati(p))
}

/// `(γ/(1+ν))(ν − Σ)(1 + Σ)`: the single-mode Riccati equation in units of ħ.
pub fn scalar_riccati_rhs(sigma: f64, gamma: f64, nu: f64) -> f64 {
    gamma / (1.0 + nu) * (nu - sigma) * (1.0 + sigma)
}

/// Exact solution of [`scalar_riccati_rhs`] with `Σ(0) = Σ₀`.
///
/// With `r = (1+Σ₀)/(ν−Σ₀)`, `Σ(t) = (ν r e^{γt} − 1)/(1 + r e^{γt})`,
/// evaluated as `(ν r − e^{−γt})/(e^{−γt} + r)` to stay finite for large `t`.
pub fn scalar_riccati_closed_form(sigma0: f64, gamma: f64, nu: f64, t: f64) -> f64 {
    if sigma0 == nu {
        return nu;
    }
    let r = (1.0 + sigma0) / (nu - sigma0);
    let decay = (-gamma * t).exp();
    let denom = decay + r;
    debug_assert!(denom != 0.0, "closed form denominator vanished");
    (nu * r - decay) / denom
}

/// Dimensionless Riccati right-hand side for `S = P/ħ` of a multimode
/// oscillator with `A = G/2 + iH` and `N = νI`:
///
/// `i[S, H] − ((S+I) G (S−νI) + (S−νI) G (S+I)) / (2(ν+1))`.
pub fn dimensionless_riccati_rhs(
    s: &ComplexMatrix,
    h: &ComplexMatrix,
    g: &ComplexMatrix,
    nu: f64,
) -> ComplexMatrix {
    let n = s.rows();
    let id = ComplexMatrix::identity(n);
    let commutator = (s * h - h * s).scale_complex(Complex64::i());
    let plus = s + &id;
    let minus = s - id.scale(nu);
    let sym = &plus * g * &minus + &minus * g * &plus;
    commutator - sym.scale(1.0 / (2.0 * (nu + 1.0)))
}

/// `P + G_cl`, the covariance of the a posteriori Gaussian state.
pub fn posterior_antinormal_covariance(p: &ComplexMatrix, g_cl: &ComplexMatrix) -> ComplexMatrix {
    (p + g_cl).hermitian_part()
}

/// Constant coefficients of one model segment.
#[derive(Debug, Clone)]
pub(crate) struct Coefficients {
    pub a: ComplexMatrix,
    a_adj: ComplexMatrix,
    pub f: ComplexMatrix,
    f_adj: ComplexMatrix,
    diffusion: ComplexMatrix,
    j_t_adj: ComplexMatrix,
    /// `(N + I)⁻¹`
    weight: ComplexMatrix,
}

impl Coefficients {
    pub fn new(sig: &SignalModel, ch: &ChannelModel) -> Result<Self> {
        let m = sig.m();
        let weight =
            solve_hpd(&ch.heterodyne_covariance(), &ComplexMatrix::identity(m))?.hermitian_part();
        Ok(Self {
            a: sig.a.clone(),
            a_adj: sig.a.adjoint(),
            f: ch.f.clone(),
            f_adj: ch.f.adjoint(),
            diffusion: sig.diffusion(),
            j_t_adj: &sig.j * ch.t.adjoint(),
            weight,
        })
    }

    fn cross(&self, p: &ComplexMatrix) -> ComplexMatrix {
        p * &self.f_adj + &self.j_t_adj
    }

    pub fn gain(&self, p: &ComplexMatrix) -> ComplexMatrix {
        self.cross(p) * &self.weight
    }

    pub fn drift(&self, k: &ComplexMatrix) -> ComplexMatrix {
        &self.a + k * &self.f
    }

    /// `K (N+I) K⁺ = X (N+I)⁻¹ X⁺`.
    pub(crate) fn innovation_source(&self, p: &ComplexMatrix) -> ComplexMatrix {
        let x = self.cross(p);
        (&x * &self.weight * x.adjoint()).hermitian_part()
    }

    fn lyapunov_open(&self, x: &ComplexMatrix) -> ComplexMatrix {
        -(&self.a * x) - x * &self.a_adj
    }

    pub fn riccati(&self, p: &ComplexMatrix) -> ComplexMatrix {
        (&self.diffusion + self.lyapunov_open(p) - self.innovation_source(p)).hermitian_part()
    }

    fn derivative(&self, state: &FilterState) -> FilterState {
        let k = self.gain(&state.p);
        let b = self.drift(&k);
        let source = self.innovation_source(&state.p);
        let c = &state.c;
        FilterState {
            p: &self.diffusion + self.lyapunov_open(&state.p) - &source,
            r: &self.diffusion + self.lyapunov_open(&state.r),
            g: self.lyapunov_open(&state.g) + &source,
            c: -(&b * c) - c * b.adjoint() + &k * k.adjoint(),
        }
    }
}

/// The four Hermitian unknowns integrated together.
#[derive(Debug, Clone)]
struct FilterState {
    p: ComplexMatrix,
    r: ComplexMatrix,
    g: ComplexMatrix,
    c: ComplexMatrix,
}

impl FilterState {
    fn axpy(&self, h: f64, d: &FilterState) -> FilterState {
        FilterState {
            p: &self.p + d.p.scale(h),
            r: &self.r + d.r.scale(h),
            g: &self.g + d.g.scale(h),
            c: &self.c + d.c.scale(h),
        }
    }

    fn symmetrize(&mut self) {
        self.p = self.p.hermitian_part();
        self.r = self.r.hermitian_part();
        self.g = self.g.hermitian_part();
        self.c = self.c.hermitian_part();
    }
}

fn rk4_step(coeffs: &Coefficients, y: &FilterState, h: f64) -> FilterState {
    let k1 = coeffs.derivative(y);
    let k2 = coeffs.derivative(&y.axpy(h / 2.0, &k1));
    let k3 = coeffs.derivative(&y.axpy(h / 2.0, &k2));
    let k4 = coeffs.derivative(&y.axpy(h, &k3));
    let mut out = y.clone();
    let w = h / 6.0;
    out.p += &(k1.p + k2.p.scale(2.0) + k3.p.scale(2.0) + k4.p).scale(w);
    out.r += &(k1.r + k2.r.scale(2.0) + k3.r.scale(2.0) + k4.r).scale(w);
    out.g += &(k1.g + k2.g.scale(2.0) + k3.g.scale(2.0) + k4.g).scale(w);
    out.c += &(k1.c + k2.c.scale(2.0) + k3.c.scale(2.0) + k4.c).scale(w);
    out.symmetrize();
    out
}

fn check_positivity(p: &ComplexMatrix, time: f64) -> Result<()> {
    let min = min_eigenvalue_hermitian(p)?;
    if min < -POSITIVITY_TOL * p.frobenius_norm() {
        return Err(Error::PositivityLost {
            time,
            min_eigenvalue: min,
        });
    }
    if !p.is_finite() {
        return Err(Error::NonFinite("Riccati integration"));
    }
    Ok(())
}

/// Number of grid intervals of width `step` in `[0, t_end]`.
pub(crate) fn grid_intervals(t_end: f64, step: f64) -> Result<usize> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "t_end must be positive, got {t_end}"
        )));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "step must be positive, got {step}"
        )));
    }
    let ratio = t_end / step;
    let count = ratio.round();
    if count < 1.0 || (ratio - count).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::GridMisaligned(format!(
            "t_end = {t_end} is not a whole number of steps of {step}"
        )));
    }
    Ok(count as usize)
}

/// Time-gridded solution of the filter synthesis problem.
#[derive(Debug, Clone)]
pub struct FilterSynthesis {
    /// Grid `tᵢ = i·step`, starting at zero.
    pub times: Vec<f64>,
    /// A posteriori correlation.
    pub p: Vec<ComplexMatrix>,
    /// Optimal gain.
    pub k: Vec<ComplexMatrix>,
    /// Closed-loop drift.
    pub b: Vec<ComplexMatrix>,
    /// `tr P(tᵢ)`, the minimal mean quadratic error.
    pub trace_error: Vec<f64>,
    /// Covariance of the estimate.
    pub g_cl: Vec<ComplexMatrix>,
    /// Unconditional correlation of the signal.
    pub r: Vec<ComplexMatrix>,
    /// Commutator matrix of the filter output.
    pub c_comm: Vec<ComplexMatrix>,
    /// Reported grid spacing.
    pub step: f64,
    /// Richardson estimate of the global error in `P` (Frobenius, max over grid).
    pub error_estimate: f64,
    /// `P` on the half-step grid used for the reported values.
    pub(crate) fine_p: Vec<ComplexMatrix>,
    schedule: ModelSchedule,
    coeffs: Vec<Coefficients>,
}

/// Integrates the filter equations for a time-invariant model.
pub fn integrate_riccati(
    sig: &SignalModel,
    ch: &ChannelModel,
    t_end: f64,
    step: f64,
) -> Result<FilterSynthesis> {
    integrate_schedule(
        &ModelSchedule::constant(sig.clone(), ch.clone()),
        t_end,
        step,
    )
}

/// Integrates the filter equations over a piecewise-constant schedule.
/// Segment boundaries must lie on the grid.
pub fn integrate_schedule(
    schedule: &ModelSchedule,
    t_end: f64,
    step: f64,
) -> Result<FilterSynthesis> {
    let intervals = grid_intervals(t_end, step)?;
    for seg in &schedule.segments()[1..] {
        let ratio = seg.start / step;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::GridMisaligned(format!(
                "segment boundary {} is not on the grid of step {step}",
                seg.start
            )));
        }
    }
    let coeffs = schedule
        .segments()
        .iter()
        .map(|s| Coefficients::new(&s.signal, &s.channel))
        .collect::<Result<Vec<_>>>()?;

    let n = schedule.n();
    let r0 = schedule.initial().signal.r0.clone();
    let initial = FilterState {
        p: r0.clone(),
        r: r0,
        g: ComplexMatrix::zeros(n, n),
        c: ComplexMatrix::zeros(n, n),
    };
    check_positivity(&initial.p, 0.0)?;

    let times: Vec<f64> = (0..=intervals).map(|i| i as f64 * step).collect();
    let mut coarse = initial.clone();
    let mut fine = initial.clone();
    let mut fine_p = Vec::with_capacity(2 * intervals + 1);
    fine_p.push(fine.p.clone());
    let mut states = Vec::with_capacity(intervals + 1);
    states.push(initial);
    let mut error_estimate = 0.0f64;

    for i in 0..intervals {
        let (t0, t1) = (times[i], times[i + 1]);
        let seg = &coeffs[schedule.segment_index_for_step(t0, t1)];
        coarse = rk4_step(seg, &coarse, step);
        check_positivity(&coarse.p, t1)?;
        fine = rk4_step(seg, &fine, step / 2.0);
        check_positivity(&fine.p, t0 + step / 2.0)?;
        fine_p.push(fine.p.clone());
        fine = rk4_step(seg, &fine, step / 2.0);
        check_positivity(&fine.p, t1)?;
        fine_p.push(fine.p.clone());
        error_estimate = error_estimate.max((&coarse.p - &fine.p).frobenius_norm() / 15.0);
        states.push(fine.clone());
    }

    let mut p = Vec::with_capacity(states.len());
    let mut k = Vec::with_capacity(states.len());
    let mut b = Vec::with_capacity(states.len());
    let mut trace_error = Vec::with_capacity(states.len());
    let mut g_cl = Vec::with_capacity(states.len());
    let mut r = Vec::with_capacity(states.len());
    let mut c_comm = Vec::with_capacity(states.len());
    for (i, state) in states.into_iter().enumerate() {
        // Gain at a boundary belongs to the segment that starts there.
        let seg = &coeffs[schedule.segments().partition_point(|s| s.start <= times[i]) - 1];
        let gain = seg.gain(&state.p);
        b.push(seg.drift(&gain));
        k.push(gain);
        trace_error.push(state.p.trace().re);
        p.push(state.p);
        g_cl.push(state.g);
        r.push(state.r);
        c_comm.push(state.c);
    }

    Ok(FilterSynthesis {
        times,
        p,
        k,
        b,
        trace_error,
        g_cl,
        r,
        c_comm,
        step,
        error_estimate,
        fine_p,
        schedule: schedule.clone(),
        coeffs,
    })
}

impl FilterSynthesis {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("grid is never empty")
    }

    pub fn n(&self) -> usize {
        self.schedule.n()
    }

    pub fn m(&self) -> usize {
        self.schedule.m()
    }

    pub fn schedule(&self) -> &ModelSchedule {
        &self.schedule
    }

    /// Grid index of `t`, if `t` is a grid point.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let ratio = t / self.step;
        let idx = ratio.round();
        if idx < 0.0 || (ratio - idx).abs() > 1e-9 * ratio.abs().max(1.0) {
            return None;
        }
        let idx = idx as usize;
        (idx < self.len()).then_some(idx)
    }

    pub(crate) fn coefficients_for_step(&self, t0: f64, t1: f64) -> &Coefficients {
        &self.coeffs[self.schedule.segment_index_for_step(t0, t1)]
    }

    /// `P(t)` by cubic Hermite interpolation on the half-step grid.
    pub fn posterior_at(&self, t: f64) -> Result<ComplexMatrix> {
        let horizon = self.horizon();
        if !(0.0..=horizon * (1.0 + 1e-12)).contains(&t) {
            return Err(Error::OutsideGrid {
                start: t,
                end: t,
                horizon,
            });
        }
        let h = self.step / 2.0;
        let last = self.fine_p.len() - 1;
        let pos = (t / h).clamp(0.0, last as f64);
        let nearest = pos.round();
        if (pos - nearest).abs() <= 1e-9 * pos.max(1.0) {
            return Ok(self.fine_p[nearest as usize].clone());
        }
        let i = (pos.floor() as usize).min(last - 1);
        let u = pos - i as f64;
        let (t0, t1) = (i as f64 * h, (i + 1) as f64 * h);
        let coeffs = self.coefficients_for_step(t0, t1);
        let (p0, p1) = (&self.fine_p[i], &self.fine_p[i + 1]);
        let (d0, d1) = (coeffs.riccati(p0), coeffs.riccati(p1));
        let u2 = u * u;
        let u3 = u2 * u;
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = u3 - 2.0 * u2 + u;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = u3 - u2;
        let out = p0.scale(h00) + d0.scale(h10 * h) + p1.scale(h01) + d1.scale(h11 * h);
        Ok(out.hermitian_part())
    }

    /// Optimal gain at any `t` in the horizon.
    pub fn gain_at(&self, t: f64) -> Result<ComplexMatrix> {
        let p = self.posterior_at(t)?;
        Ok(self.coefficients_at(t).gain(&p))
    }

    fn coefficients_at(&self, t: f64) -> &Coefficients {
        let idx = self
            .schedule
            .segments()
            .partition_point(|s| s.start <= t)
            .max(1)
            - 1;
        &self.coeffs[idx]
    }

    /// `‖dP/dt‖_F` at the final grid point.
    pub fn stationarity_residual(&self) -> f64 {
        let last = self.len() - 1;
        let coeffs = self.coefficients_at(self.times[last]);
        coeffs.riccati(&self.p[last]).frobenius_norm()
    }

    /// `P(tᵢ) + G_cl(tᵢ)`.
    pub fn posterior_covariance(&self, i: usize) -> ComplexMatrix {
        posterior_antinormal_covariance(&self.p[i], &self.g_cl[i])
    }

    /// Largest `‖R − (P + G_cl)‖_F / max(‖R‖_F, tiny)` over the grid.
    pub fn orthogonality_residual(&self) -> f64 {
        (0..self.len())
            .map(|i| {
                let diff = (&self.r[i] - self.posterior_covariance(i)).frobenius_norm();
                diff / self.r[i].frobenius_norm().max(f64::MIN_POSITIVE)
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{oscillator_to_general, OscillatorModel, Segment};

    fn osc(omega: f64, gamma: f64, nu: f64, sigma0: f64, hbar: f64) -> (SignalModel, ChannelModel) {
        oscillator_to_general(&OscillatorModel {
            omega,
            gamma,
            nu,
            sigma0,
            hbar,
        })
        .unwrap()
    }

    /// Independent scalar oracle: RK4 on the single-mode equation with
    /// step halving until two successive results agree.
    fn scalar_oracle(sigma0: f64, gamma: f64, nu: f64, t: f64) -> f64 {
        let solve = |steps: usize| {
            let h = t / steps as f64;
            let f = |s: f64| gamma / (1.0 + nu) * (nu - s) * (1.0 + s);
            let mut s = sigma0;
            for _ in 0..steps {
                let k1 = f(s);
                let k2 = f(s + h / 2.0 * k1);
                let k3 = f(s + h / 2.0 * k2);
                let k4 = f(s + h * k3);
                s += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            s
        };
        let mut steps = 64;
        let mut prev = solve(steps);
        loop {
            steps *= 2;
            let next = solve(steps);
            if (next - prev).abs() < 1e-14 || steps > 1 << 20 {
                return next;
            }
            prev = next;
        }
    }

    #[test]
    fn closed_form_agrees_with_integrator_oracle() {
        for &(s0, g, nu, t) in &[
            (1.0, 1.0, 0.0, 1.0),
            (3.0, 1.0, 1.0, 2.0),
            (0.0, 2.0, 1.0, 0.7),
            (10.0, 0.3, 0.5, 5.0),
            (0.2, 1.5, 4.0, 3.0),
        ] {
            let closed = scalar_riccati_closed_form(s0, g, nu, t);
            let oracle = scalar_oracle(s0, g, nu, t);
            assert!(
                (closed - oracle).abs() < 1e-11,
                "{s0} {g} {nu} {t}: {closed} vs {oracle}"
            );
        }
    }

    #[test]
    fn closed_form_examples() {
        let e = std::f64::consts::E;
        let v = scalar_riccati_closed_form(1.0, 1.0, 0.0, 1.0);
        // frozen: 1/(2e − 1)
        assert!((v - 1.0 / (2.0 * e - 1.0)).abs() < 1e-15);
        assert!((v - 0.225_399).abs() < 1e-6);
        assert_eq!(scalar_riccati_closed_form(0.7, 1.0, 0.7, 9.0), 0.7);
        assert!((scalar_riccati_closed_form(2.5, 3.0, 0.1, 0.0) - 2.5).abs() < 1e-15);
        assert!((scalar_riccati_closed_form(2.5, 3.0, 0.1, 1e4) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn scalar_rhs_examples() {
        assert_eq!(scalar_riccati_rhs(0.4, 1.3, 0.4), 0.0);
        assert_eq!(scalar_riccati_rhs(2.0, 1.0, 0.0), -6.0);
        assert_eq!(scalar_riccati_rhs(0.0, 2.0, 1.0), 1.0);
    }

    #[test]
    fn gain_examples() {
        let (sig, ch) = osc(1.0, 1.0, 0.5, 2.0, 1.0);
        let k = gain(&ComplexMatrix::real_scalar(0.5), &sig, &ch).unwrap();
        assert!(k[(0, 0)].norm() < 1e-15);

        let (sig, ch) = osc(1.0, 1.0, 1.0, 0.0, 1.0);
        let k = gain(&ComplexMatrix::real_scalar(0.0), &sig, &ch).unwrap();
        assert!((k[(0, 0)] - Complex64::new(0.5, 0.0)).norm() < 1e-15);
        // K = (ν − Σ) J / (1 + ν)
        let expected = (1.0 - 0.0) * sig.j[(0, 0)] / 2.0;
        assert!((k[(0, 0)] - expected).norm() < 1e-15);

        let s = ComplexMatrix::real_scalar;
        let sig = SignalModel::new(s(1.0), s(1.0), s(1.0), s(1.0), s(0.0), 1.0).unwrap();
        let ch = ChannelModel::new(&sig, s(0.0), s(0.3), s(0.0), s(0.0)).unwrap();
        assert_eq!(
            gain(&s(2.0), &sig, &ch).unwrap()[(0, 0)],
            Complex64::new(0.0, 0.0)
        );
        assert!(gain(&ComplexMatrix::identity(2), &sig, &ch).is_err());
    }

    #[test]
    fn drift_examples() {
        let (sig, ch) = osc(1.0, 1.0, 0.5, 2.0, 1.0);
        let k = gain(&sig.r0, &sig, &ch).unwrap();
        let b = filter_drift(&sig.a, &k, &ch.f).unwrap();
        // α + γκ with κ = (Σ − ν)/(1 + ν) = 1
        assert!((b[(0, 0)] - (sig.a[(0, 0)] + 1.0)).norm() < 1e-15);

        let a = ComplexMatrix::real_scalar(0.3);
        let zero = ComplexMatrix::zeros(1, 1);
        assert_eq!(
            filter_drift(&a, &zero, &ComplexMatrix::identity(1)).unwrap(),
            a
        );
        let b = filter_drift(
            &ComplexMatrix::zeros(2, 2),
            &ComplexMatrix::identity(2),
            &ComplexMatrix::identity(2),
        )
        .unwrap();
        assert_eq!(b, ComplexMatrix::identity(2));
        assert!(
            filter_drift(&a, &ComplexMatrix::zeros(1, 2), &ComplexMatrix::identity(1)).is_err()
        );
    }

    #[test]
    fn riccati_rhs_matches_scalar_equation() {
        for &(omega, gamma, nu, hbar) in &[
            (1.0, 1.0, 0.5, 1.0),
            (-2.0, 0.3, 2.0, 0.25),
            (5.0, 4.0, 0.0, 3.0),
        ] {
            let (sig, ch) = osc(omega, gamma, nu, 0.0, hbar);
            for &sigma in &[0.0, 0.3, nu, 2.0, 7.5] {
                let p = ComplexMatrix::real_scalar(hbar * sigma);
                let rhs = riccati_rhs(&p, &sig, &ch).unwrap()[(0, 0)];
                let expected = hbar * scalar_riccati_rhs(sigma, gamma, nu);
                assert!((rhs.re - expected).abs() < 1e-13 * (1.0 + expected.abs()));
                assert!(rhs.im.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn riccati_rhs_decoupled_decay() {
        let n = 2;
        let a = ComplexMatrix::from_rows(&[
            [Complex64::new(1.0, 0.5), Complex64::new(0.2, 0.0)],
            [Complex64::new(0.0, -0.1), Complex64::new(0.7, 0.0)],
        ]);
        let sig = SignalModel::new(
            a.clone(),
            ComplexMatrix::identity(n),
            ComplexMatrix::zeros(n, n),
            ComplexMatrix::identity(n),
            ComplexMatrix::zeros(n, n),
            1.0,
        )
        .unwrap();
        let ch = ChannelModel::new(
            &sig,
            ComplexMatrix::zeros(n, n),
            ComplexMatrix::identity(n),
            ComplexMatrix::zeros(n, n),
            ComplexMatrix::zeros(n, n),
        )
        .unwrap();
        let p = ComplexMatrix::from_real_rows(&[[2.0, 0.5], [0.5, 1.0]]);
        let rhs = riccati_rhs(&p, &sig, &ch).unwrap();
        let expected = -(&a * &p) - &p * a.adjoint();
        assert!((rhs - expected).frobenius_norm() < 1e-15);
    }

    #[test]
    fn dimensionless_rhs_examples() {
        let nu = 0.8;
        let h = ComplexMatrix::from_rows(&[
            [Complex64::new(1.0, 0.0), Complex64::new(0.3, 0.4)],
            [Complex64::new(0.3, -0.4), Complex64::new(-0.5, 0.0)],
        ]);
        let g = ComplexMatrix::from_real_rows(&[[2.0, 0.5], [0.5, 1.0]]);
        let s = ComplexMatrix::scaled_identity(2, nu);
        assert!(dimensionless_riccati_rhs(&s, &h, &g, nu).frobenius_norm() < 1e-15);

        for &sigma in &[0.0, 0.4, 3.0] {
            let (gamma, nu) = (1.7, 0.6);
            let v = dimensionless_riccati_rhs(
                &ComplexMatrix::real_scalar(sigma),
                &ComplexMatrix::real_scalar(0.9),
                &ComplexMatrix::real_scalar(gamma),
                nu,
            )[(0, 0)];
            assert!((v.re - scalar_riccati_rhs(sigma, gamma, nu)).abs() < 1e-14);
        }

        // Simultaneously diagonal S and H: no commutator contribution.
        let s = ComplexMatrix::from_real_rows(&[[1.0, 0.0], [0.0, 2.0]]);
        let h = ComplexMatrix::from_real_rows(&[[3.0, 0.0], [0.0, -1.0]]);
        let g = ComplexMatrix::identity(2);
        let with_h = dimensionless_riccati_rhs(&s, &h, &g, nu);
        let without = dimensionless_riccati_rhs(&s, &ComplexMatrix::zeros(2, 2), &g, nu);
        assert!((with_h - without).frobenius_norm() < 1e-15);
    }

    #[test]
    fn integrated_scalar_matches_closed_form() {
        let (sig, ch) = osc(1.0, 1.0, 0.0, 1.0, 1.0);
        let synth = integrate_riccati(&sig, &ch, 5.0, 1e-2).unwrap();
        for (i, &t) in synth.times.iter().enumerate() {
            let exact = scalar_riccati_closed_form(1.0, 1.0, 0.0, t);
            assert!((synth.p[i][(0, 0)].re - exact).abs() < 1e-8, "t = {t}");
        }
        let i1 = synth.index_of(1.0).unwrap();
        assert!((synth.trace_error[i1] - 1.0 / (2.0 * std::f64::consts::E - 1.0)).abs() < 1e-8);
        assert!(synth.error_estimate < 1e-8);
    }

    #[test]
    fn stationary_start_stays_put() {
        let nu = 1.3;
        let (sig, ch) = osc(2.0, 0.7, nu, nu, 1.0);
        let synth = integrate_riccati(&sig, &ch, 3.0, 1e-2).unwrap();
        for i in 0..synth.len() {
            assert!((synth.p[i][(0, 0)] - Complex64::new(nu, 0.0)).norm() < 1e-12);
            assert!(synth.k[i].frobenius_norm() < 1e-12);
        }
    }

    #[test]
    fn linear_decay_without_noise() {
        let n = 3;
        let a_rate = 0.8;
        let r0 = ComplexMatrix::from_rows(&[
            [
                Complex64::new(2.0, 0.0),
                Complex64::new(0.1, 0.2),
                Complex64::new(0.0, 0.0),
            ],
            [
                Complex64::new(0.1, -0.2),
                Complex64::new(1.0, 0.0),
                Complex64::new(0.3, 0.0),
            ],
            [
                Complex64::new(0.0, 0.0),
                Complex64::new(0.3, 0.0),
                Complex64::new(1.5, 0.0),
            ],
        ]);
        let sig = SignalModel::new(
            ComplexMatrix::scaled_identity(n, a_rate),
            ComplexMatrix::identity(n),
            ComplexMatrix::zeros(n, n),
            r0.clone(),
            ComplexMatrix::zeros(n, n),
            1.0,
        )
        .unwrap();
        let ch = ChannelModel::new(
            &sig,
            ComplexMatrix::zeros(n, n),
            ComplexMatrix::identity(n),
            ComplexMatrix::zeros(n, n),
            ComplexMatrix::zeros(n, n),
        )
        .unwrap();
        let synth = integrate_riccati(&sig, &ch, 2.0, 1e-2).unwrap();
        for (i, &t) in synth.times.iter().enumerate() {
            let exact = r0.scale((-2.0 * a_rate * t).exp());
            assert!((&synth.p[i] - exact).frobenius_norm() < 1e-8);
        }
    }

    #[test]
    fn orthogonality_identity_holds() {
        let (sig, ch) = osc(1.0, 1.0, 1.0, 3.0, 1.0);
        let synth = integrate_riccati(&sig, &ch, 3.0, 1e-2).unwrap();
        assert!(synth.orthogonality_residual() < 1e-8);
        assert_eq!(synth.posterior_covariance(0), sig.r0);
    }

    #[test]
    fn stationary_scalar_posterior_covariance_is_constant() {
        let nu = 0.9;
        let (sig, ch) = osc(1.0, 2.0, nu, nu, 1.0);
        let synth = integrate_riccati(&sig, &ch, 2.0, 1e-2).unwrap();
        for i in 0..synth.len() {
            let v = synth.posterior_covariance(i)[(0, 0)];
            assert!((v - Complex64::new(nu, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn scalar_unconditional_correlation_closed_form() {
        // dR/dt = ħγν − γR: R(t) = ħν + (R₀ − ħν) e^{−γt}.
        let (gamma, nu, s0, hbar) = (1.4, 0.6, 2.5, 0.5);
        let (sig, ch) = osc(3.0, gamma, nu, s0, hbar);
        let synth = integrate_riccati(&sig, &ch, 2.0, 1e-2).unwrap();
        for (i, &t) in synth.times.iter().enumerate() {
            let exact = hbar * nu + (hbar * s0 - hbar * nu) * (-gamma * t).exp();
            assert!((synth.r[i][(0, 0)].re - exact).abs() < 1e-10);
            assert!((synth.posterior_covariance(i)[(0, 0)].re - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn monotone_approach_to_equilibrium() {
        for &(s0, nu) in &[(3.0, 1.0), (0.0, 2.0)] {
            let (sig, ch) = osc(1.0, 1.0, nu, s0, 1.0);
            let synth = integrate_riccati(&sig, &ch, 10.0, 1e-2).unwrap();
            let values: Vec<f64> = synth.p.iter().map(|p| p[(0, 0)].re).collect();
            for w in values.windows(2) {
                assert!((w[1] - nu).abs() <= (w[0] - nu).abs() + 1e-15);
            }
            assert!((values.last().unwrap() - nu).abs() < 1e-3);
        }
    }

    #[test]
    fn drift_reproduces_langevin_form() {
        let (omega, gamma, nu, s0, hbar) = (1.5, 0.8, 0.4, 2.2, 1.7);
        let (sig, ch) = osc(omega, gamma, nu, s0, hbar);
        let synth = integrate_riccati(&sig, &ch, 2.0, 1e-2).unwrap();
        for i in 0..synth.len() {
            let sigma = synth.p[i][(0, 0)].re / hbar;
            let kappa = (sigma - nu) / (1.0 + nu);
            let expected = sig.a[(0, 0)] + gamma * kappa;
            assert!((synth.b[i][(0, 0)] - expected).norm() < 1e-10);
        }
    }

    #[test]
    fn grid_errors() {
        let (sig, ch) = osc(1.0, 1.0, 0.0, 1.0, 1.0);
        assert!(matches!(
            integrate_riccati(&sig, &ch, 1.0, 0.3),
            Err(Error::GridMisaligned(_))
        ));
        assert!(integrate_riccati(&sig, &ch, 0.0, 0.1).is_err());
        assert!(integrate_riccati(&sig, &ch, 1.0, -0.1).is_err());
    }

    #[test]
    fn interpolated_posterior_is_accurate() {
        let (sig, ch) = osc(1.0, 1.0, 0.0, 1.0, 1.0);
        let synth = integrate_riccati(&sig, &ch, 2.0, 0.01).unwrap();
        for &t in &[0.0, 0.003, 0.0137, 0.5, 1.234_567, 2.0] {
            let p = synth.posterior_at(t).unwrap()[(0, 0)].re;
            assert!(
                (p - scalar_riccati_closed_form(1.0, 1.0, 0.0, t)).abs() < 1e-9,
                "t = {t}: {p} vs {}",
                scalar_riccati_closed_form(1.0, 1.0, 0.0, t)
            );
        }
        assert!(synth.posterior_at(2.5).is_err());
    }

    #[test]
    fn schedule_switches_coefficients() {
        let (sig1, ch1) = osc(1.0, 1.0, 0.5, 2.0, 1.0);
        let (sig2, ch2) = osc(1.0, 2.0, 0.5, 2.0, 1.0);
        let sched = ModelSchedule::new(vec![
            Segment {
                start: 0.0,
                signal: sig1.clone(),
                channel: ch1.clone(),
            },
            Segment {
                start: 1.0,
                signal: sig2,
                channel: ch2,
            },
        ])
        .unwrap();
        let synth = integrate_schedule(&sched, 3.0, 1e-2).unwrap();
        let i1 = synth.index_of(1.0).unwrap();
        let sigma1 = scalar_riccati_closed_form(2.0, 1.0, 0.5, 1.0);
        assert!((synth.p[i1][(0, 0)].re - sigma1).abs() < 1e-9);
        let sigma3 = scalar_riccati_closed_form(sigma1, 2.0, 0.5, 2.0);
        assert!((synth.p.last().unwrap()[(0, 0)].re - sigma3).abs() < 1e-8);

        let bad = ModelSchedule::new(vec![
            Segment {
                start: 0.0,
                signal: sig1.clone(),
                channel: ch1.clone(),
            },
            Segment {
                start: 1.005,
                signal: sig1,
                channel: ch1,
            },
        ])
        .unwrap();
        assert!(integrate_schedule(&bad, 3.0, 1e-2).is_err());
    }

    #[test]
    fn positivity_loss_is_reported() {
        // A growing mode with a huge step drives P negative under RK4.
        let s = ComplexMatrix::real_scalar;
        let sig = SignalModel::new(s(1.0), s(1.0), s(0.0), s(100.0), s(0.0), 1.0).unwrap();
        let ch = ChannelModel::new(&sig, s(1.0), s(0.0), s(0.0), s(0.0)).unwrap();
        match integrate_riccati(&sig, &ch, 1.0, 0.5) {
            Err(Error::PositivityLost { time, .. }) => assert!(time > 0.0),
            other => panic!("expected positivity loss, got {other:?}"),
        }
    }
}
