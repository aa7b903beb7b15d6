//! Signal and channel models for linear quantum diffusions.
//!
//! A [`SignalModel`] describes the observed object
//!
//! ```text
//! dx̌ = −A x̌ dt + J dǎ,     ⟨x̌(0)* x̌(0)⟩ = R₀,  [x̌, x̌*] = C₀
//! ```
//!
//! driven by quantum white noise with normal correlation `Q`. A
//! [`ChannelModel`] describes the noisy output `ŷ = F x̌ + â` whose noise has
//! normal correlation `N`, mutual normal correlation `T` with the signal noise,
//! and commutator cross matrix `D`.
//!
//! The structural checks live here as well: the nondemolition condition
//! `J·D + C₀·F⁺ = 0` and the commutator preservation condition
//! `A·C₀ + C₀·A⁺ = J·J⁺`.

mod file;

pub use file::{MatrixJson, ModelFile, OscillatorFile};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{hermitian_eigenvalues, hermitian_residual, ComplexMatrix, PSD_CLAMP_TOL};

/// Relative tolerance for the structural validators.
pub const STRUCTURE_TOL: f64 = 1e-10;

/// The observed quantum diffusion.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalModel {
    /// n×n drift.
    pub a: ComplexMatrix,
    /// n×m noise coupling.
    pub j: ComplexMatrix,
    /// m×m normal correlation of the signal noise.
    pub q: ComplexMatrix,
    /// n×n initial normal correlation.
    pub r0: ComplexMatrix,
    /// n×n commutator matrix of the state.
    pub c0: ComplexMatrix,
    pub hbar: f64,
}

/// The noisy output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    /// m×n output matrix.
    pub f: ComplexMatrix,
    /// m×m normal correlation of the channel noise.
    pub n: ComplexMatrix,
    /// m×m mutual normal correlation between signal and channel noise.
    pub t: ComplexMatrix,
    /// m×m commutator cross matrix.
    pub d: ComplexMatrix,
}

/// Single-mode oscillator radiating into a matched transmission line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillatorModel {
    /// Angular frequency Ω.
    pub omega: f64,
    /// Damping γ.
    pub gamma: f64,
    /// Mean thermal occupation ν of the line.
    pub nu: f64,
    /// Initial occupation Σ₀ of the oscillator.
    pub sigma0: f64,
    pub hbar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    pub hbar: f64,
    pub boltzmann: f64,
}

impl PhysicalConstants {
    /// CODATA values in SI units.
    pub const SI: Self = Self {
        hbar: 1.054_571_817e-34,
        boltzmann: 1.380_649e-23,
    };
    /// ħ = k = 1.
    pub const NATURAL: Self = Self {
        hbar: 1.0,
        boltzmann: 1.0,
    };

    pub fn new(hbar: f64, boltzmann: f64) -> Result<Self> {
        if !(hbar > 0.0 && boltzmann > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "physical constants must be positive (hbar = {hbar}, k = {boltzmann})"
            )));
        }
        Ok(Self { hbar, boltzmann })
    }
}

/// Symmetrizes `m` and clamps eigenvalues in the tolerance window below zero.
fn clean_psd(name: &str, m: &ComplexMatrix) -> Result<ComplexMatrix> {
    clean_hermitian(name, m)?;
    let sym = m.hermitian_part();
    let norm = sym.frobenius_norm();
    if norm == 0.0 {
        return Ok(sym);
    }
    let eig = sym.as_nalgebra().clone().symmetric_eigen();
    let min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min < -PSD_CLAMP_TOL * norm {
        return Err(Error::InvalidParameter(format!(
            "{name} is not positive semidefinite (minimum eigenvalue {min:e})"
        )));
    }
    if min >= 0.0 {
        return Ok(sym);
    }
    let clamped = eig.eigenvalues.map(|l| Complex64::new(l.max(0.0), 0.0));
    let u = &eig.eigenvectors;
    let rebuilt: DMatrix<Complex64> = u * DMatrix::from_diagonal(&clamped) * u.adjoint();
    Ok(ComplexMatrix::from_nalgebra(rebuilt).hermitian_part())
}

fn clean_hermitian(name: &str, m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let residual = hermitian_residual(m)?;
    if residual > STRUCTURE_TOL * m.frobenius_norm().max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidParameter(format!(
            "{name} is not Hermitian (residual {residual:e})"
        )));
    }
    Ok(m.hermitian_part())
}

fn expect_shape(name: &str, m: &ComplexMatrix, shape: (usize, usize)) -> Result<()> {
    if m.shape() != shape {
        return Err(Error::Dimension(format!(
            "{name} is {}x{}, expected {}x{}",
            m.rows(),
            m.cols(),
            shape.0,
            shape.1
        )));
    }
    if !m.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "{name} has non-finite entries"
        )));
    }
    Ok(())
}

impl SignalModel {
    /// Validates shapes and Hermitian structure. `Q` and `R₀` are symmetrized
    /// and clamped to positive semidefinite.
    pub fn new(
        a: ComplexMatrix,
        j: ComplexMatrix,
        q: ComplexMatrix,
        r0: ComplexMatrix,
        c0: ComplexMatrix,
        hbar: f64,
    ) -> Result<Self> {
        let n = a.rows();
        let m = j.cols();
        if n == 0 || m == 0 {
            return Err(Error::Dimension(
                "state and noise dimensions must be positive".into(),
            ));
        }
        expect_shape("A", &a, (n, n))?;
        expect_shape("J", &j, (n, m))?;
        expect_shape("Q", &q, (m, m))?;
        expect_shape("R0", &r0, (n, n))?;
        expect_shape("C0", &c0, (n, n))?;
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "hbar must be positive, got {hbar}"
            )));
        }
        Ok(Self {
            q: clean_psd("Q", &q)?,
            r0: clean_psd("R0", &r0)?,
            c0: clean_hermitian("C0", &c0)?,
            a,
            j,
            hbar,
        })
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.rows()
    }

    /// Noise dimension.
    pub fn m(&self) -> usize {
        self.j.cols()
    }

    /// `J·Q·J⁺`, the signal diffusion.
    pub fn diffusion(&self) -> ComplexMatrix {
        (&self.j * &self.q * self.j.adjoint()).hermitian_part()
    }
}

impl ChannelModel {
    /// Validates shapes against `sig` and the Hermitian structure of `N`.
    pub fn new(
        sig: &SignalModel,
        f: ComplexMatrix,
        n: ComplexMatrix,
        t: ComplexMatrix,
        d: ComplexMatrix,
    ) -> Result<Self> {
        let (dim_n, dim_m) = (sig.n(), sig.m());
        expect_shape("F", &f, (dim_m, dim_n))?;
        expect_shape("N", &n, (dim_m, dim_m))?;
        expect_shape("T", &t, (dim_m, dim_m))?;
        expect_shape("D", &d, (dim_m, dim_m))?;
        Ok(Self {
            n: clean_psd("N", &n)?,
            f,
            t,
            d,
        })
    }

    pub fn m(&self) -> usize {
        self.n.rows()
    }

    /// `N + I`, the measurement noise covariance after heterodyning.
    pub fn heterodyne_covariance(&self) -> ComplexMatrix {
        &self.n + ComplexMatrix::identity(self.m())
    }

    /// `[[Q, T⁺], [T, N+I]]`.
    pub fn joint_noise_covariance(&self, sig: &SignalModel) -> Result<ComplexMatrix> {
        let joint = ComplexMatrix::block2x2(
            &sig.q,
            &self.t.adjoint(),
            &self.t,
            &self.heterodyne_covariance(),
        )?;
        Ok(joint.hermitian_part())
    }
}

fn check_pair(sig: &SignalModel, ch: &ChannelModel) -> Result<()> {
    if ch.f.shape() != (sig.m(), sig.n()) || ch.d.shape() != (sig.m(), sig.m()) {
        return Err(Error::Dimension(format!(
            "channel (F {:?}, D {:?}) does not match signal (n = {}, m = {})",
            ch.f.shape(),
            ch.d.shape(),
            sig.n(),
            sig.m()
        )));
    }
    Ok(())
}

/// `‖J·D + C₀·F⁺‖_F`.
pub fn validate_nondemolition(sig: &SignalModel, ch: &ChannelModel) -> Result<f64> {
    check_pair(sig, ch)?;
    Ok((&sig.j * &ch.d + &sig.c0 * ch.f.adjoint()).frobenius_norm())
}

/// Magnitude against which [`validate_nondemolition`] is judged.
pub fn nondemolition_scale(sig: &SignalModel, ch: &ChannelModel) -> f64 {
    sig.j.frobenius_norm() * ch.d.frobenius_norm() + sig.c0.frobenius_norm() * ch.f.frobenius_norm()
}

/// Least-squares solution `D` of `J·D + C₀·F⁺ = 0`, with its residual.
///
/// Uses the pseudo-inverse of `J`, which is the exact solution `−J⁻¹C₀F⁺`
/// for square invertible `J` and the minimum-norm exact solution when `J`
/// has full row rank. Fails when the residual stays above tolerance.
pub fn solve_nondemolition_d(
    j: &ComplexMatrix,
    c0: &ComplexMatrix,
    f: &ComplexMatrix,
) -> Result<(ComplexMatrix, f64)> {
    let (n, m) = j.shape();
    if c0.shape() != (n, n) || f.shape() != (m, n) {
        return Err(Error::Dimension(format!(
            "J {:?}, C0 {:?}, F {:?} are not conformable",
            j.shape(),
            c0.shape(),
            f.shape()
        )));
    }
    let rhs = -(c0 * f.adjoint());
    let svd = j.as_nalgebra().clone().svd(true, true);
    let eps = 1e-13 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    let pinv = svd
        .pseudo_inverse(eps)
        .map_err(|e| Error::InvalidParameter(format!("pseudo-inverse of J failed: {e}")))?;
    let d = ComplexMatrix::from_nalgebra(pinv) * &rhs;
    let residual = (j * &d - &rhs).frobenius_norm();
    let scale = rhs.frobenius_norm();
    if residual > STRUCTURE_TOL * scale.max(f64::MIN_POSITIVE) && residual > 0.0 {
        return Err(Error::NondemolitionUnsolvable { residual });
    }
    Ok((d, residual))
}

/// `‖A·C₀ + C₀·A⁺ − J·J⁺‖_F`.
pub fn validate_commutator_preservation(sig: &SignalModel) -> f64 {
    (&sig.a * &sig.c0 + &sig.c0 * sig.a.adjoint() - &sig.j * sig.j.adjoint()).frobenius_norm()
}

/// Magnitude against which [`validate_commutator_preservation`] is judged.
pub fn preservation_scale(sig: &SignalModel) -> f64 {
    2.0 * sig.a.frobenius_norm() * sig.c0.frobenius_norm() + sig.j.frobenius_norm().powi(2)
}

impl OscillatorModel {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.omega, self.gamma, self.nu, self.sigma0, self.hbar]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidParameter(
                "oscillator parameters must be finite".into(),
            ));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.nu >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "nu must be nonnegative, got {}",
                self.nu
            )));
        }
        if !(self.sigma0 >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma0 must be nonnegative, got {}",
                self.sigma0
            )));
        }
        if !(self.hbar > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "hbar must be positive, got {}",
                self.hbar
            )));
        }
        Ok(())
    }

    /// Complex decay rate `α = iΩ + γ/2`.
    pub fn alpha(&self) -> Complex64 {
        Complex64::new(self.gamma / 2.0, self.omega)
    }
}

/// Writes the oscillator in the general signal/channel form.
///
/// `A = iΩ + γ/2`, `J = √(ħγ)`, `F = −√(γ/ħ)`, `Q = N = T = ν`, `D = 1`,
/// `C₀ = ħ`, `R₀ = ħΣ₀`.
pub fn oscillator_to_general(osc: &OscillatorModel) -> Result<(SignalModel, ChannelModel)> {
    osc.validate()?;
    let hbar = osc.hbar;
    let s = ComplexMatrix::real_scalar;
    let sig = SignalModel::new(
        ComplexMatrix::scalar(osc.alpha()),
        s((hbar * osc.gamma).sqrt()),
        s(osc.nu),
        s(hbar * osc.sigma0),
        s(hbar),
        hbar,
    )?;
    let ch = ChannelModel::new(
        &sig,
        s(-(osc.gamma / hbar).sqrt()),
        s(osc.nu),
        s(osc.nu),
        s(1.0),
    )?;
    Ok((sig, ch))
}

/// Multimode oscillator with `A = G/2 + iH`, `J J⁺ = ħG`, `F = −J⁺/ħ`,
/// channel and signal noise both thermal, `Q = N = T = νI`, `C₀ = ħI`,
/// `D = I`, and initial correlation `R₀ = ħS₀`.
///
/// `H` must be Hermitian and `G` Hermitian positive semidefinite.
pub fn multimode_oscillator(
    h: &ComplexMatrix,
    g: &ComplexMatrix,
    nu: f64,
    s0: &ComplexMatrix,
    hbar: f64,
) -> Result<(SignalModel, ChannelModel)> {
    let n = h.rows();
    expect_shape("H", h, (n, n))?;
    expect_shape("G", g, (n, n))?;
    expect_shape("S0", s0, (n, n))?;
    if !(nu >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "nu must be nonnegative, got {nu}"
        )));
    }
    let h = clean_hermitian("H", h)?;
    let g = clean_psd("G", g)?;
    let a = g.scale(0.5) + h.scale_complex(Complex64::i());
    let j = crate::matrix::factor_psd(&g)?.scale(hbar.sqrt());
    let thermal = ComplexMatrix::scaled_identity(n, nu);
    let sig = SignalModel::new(
        a,
        j.clone(),
        thermal.clone(),
        s0.scale(hbar),
        ComplexMatrix::scaled_identity(n, hbar),
        hbar,
    )?;
    let ch = ChannelModel::new(
        &sig,
        j.adjoint().scale(-1.0 / hbar),
        thermal.clone(),
        thermal,
        ComplexMatrix::identity(n),
    )?;
    Ok((sig, ch))
}

/// Mean thermal occupation `ν = 1/(exp(ħγ/kT) − 1)`.
pub fn mean_occupation(temp: f64, gamma: f64, constants: PhysicalConstants) -> Result<f64> {
    if !(temp > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive, got {temp}"
        )));
    }
    let x = constants.hbar * gamma / (constants.boltzmann * temp);
    Ok(1.0 / x.exp_m1())
}

/// Effective heterodyne noise intensity `σ = ħ(ν+1)γ`.
pub fn effective_intensity(nu: f64, gamma: f64, hbar: f64) -> f64 {
    hbar * (nu + 1.0) * gamma
}

/// Temperature `T = ħΩ / (k ln(1 + 1/Σ))` of a thermal state with occupation Σ.
pub fn temperature_from_occupation(
    sigma_occ: f64,
    omega: f64,
    constants: PhysicalConstants,
) -> Result<f64> {
    if !(sigma_occ > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "occupation must be positive, got {sigma_occ}"
        )));
    }
    if !(omega > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "omega must be positive, got {omega}"
        )));
    }
    Ok(constants.hbar * omega / (constants.boltzmann * (1.0 / sigma_occ).ln_1p()))
}

/// Whether the commutator matrix is degenerate, in which case commutator
/// preservation is not required for nondemolition.
pub fn commutator_is_degenerate(sig: &SignalModel) -> Result<bool> {
    let norm = sig.c0.frobenius_norm();
    if norm == 0.0 {
        return Ok(true);
    }
    let eig = hermitian_eigenvalues(&sig.c0)?;
    Ok(eig.iter().any(|l| l.abs() <= STRUCTURE_TOL * norm))
}

/// Outcome of the structural checks on a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StructureReport {
    pub nondemolition_residual: f64,
    pub preservation_residual: f64,
    pub joint_noise_min_eigenvalue: f64,
    pub pass: bool,
}

/// Runs the nondemolition, commutator-preservation and classical-realization
/// checks. Preservation is only required when `C₀` is nondegenerate, which
/// admits classical models with `C₀ = 0`.
pub fn structure_report(sig: &SignalModel, ch: &ChannelModel) -> Result<StructureReport> {
    let nondemolition_residual = validate_nondemolition(sig, ch)?;
    let preservation_residual = validate_commutator_preservation(sig);
    let joint = ch.joint_noise_covariance(sig)?;
    let eig = hermitian_eigenvalues(&joint)?;
    let joint_noise_min_eigenvalue = eig[0];

    let nondemolition_ok = nondemolition_residual <= STRUCTURE_TOL * nondemolition_scale(sig, ch);
    let preservation_ok = preservation_residual <= STRUCTURE_TOL * preservation_scale(sig)
        || commutator_is_degenerate(sig)?;
    let joint_ok = joint_noise_min_eigenvalue >= -PSD_CLAMP_TOL * joint.frobenius_norm();
    Ok(StructureReport {
        nondemolition_residual,
        preservation_residual,
        joint_noise_min_eigenvalue,
        pass: nondemolition_ok && preservation_ok && joint_ok,
    })
}

/// One time-invariant piece of a piecewise-constant model.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub signal: SignalModel,
    pub channel: ChannelModel,
}

/// Piecewise-constant model schedule. Segment `k` applies on
/// `[start_k, start_{k+1})`; the first starts at zero and supplies `R₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSchedule {
    segments: Vec<Segment>,
}

impl ModelSchedule {
    pub fn constant(signal: SignalModel, channel: ChannelModel) -> Self {
        Self {
            segments: vec![Segment {
                start: 0.0,
                signal,
                channel,
            }],
        }
    }

    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| Error::InvalidParameter("schedule needs at least one segment".into()))?;
        if first.start != 0.0 {
            return Err(Error::InvalidParameter(
                "first segment must start at t = 0".into(),
            ));
        }
        let (n, m) = (first.signal.n(), first.signal.m());
        for pair in segments.windows(2) {
            if !(pair[1].start > pair[0].start) {
                return Err(Error::InvalidParameter(
                    "segment start times must be strictly increasing".into(),
                ));
            }
        }
        for seg in &segments {
            if seg.signal.n() != n || seg.signal.m() != m {
                return Err(Error::Dimension("segments disagree on dimensions".into()));
            }
            check_pair(&seg.signal, &seg.channel)?;
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn initial(&self) -> &Segment {
        &self.segments[0]
    }

    /// Segment in force at time `t` (right-continuous).
    pub fn at(&self, t: f64) -> &Segment {
        let idx = self.segments.partition_point(|s| s.start <= t);
        &self.segments[idx.saturating_sub(1)]
    }

    /// Index of the segment in force on the open interval `(t0, t1)`.
    pub fn segment_index_for_step(&self, t0: f64, t1: f64) -> usize {
        let mid = 0.5 * (t0 + t1);
        self.segments
            .partition_point(|s| s.start <= mid)
            .saturating_sub(1)
    }

    pub fn n(&self) -> usize {
        self.segments[0].signal.n()
    }

    pub fn m(&self) -> usize {
        self.segments[0].signal.m()
    }
}
