//! Monte-Carlo check of the synthesized filter.
//!
//! The heterodyne record of a linear quantum diffusion is statistically
//! equivalent to a classical correlated-noise model: signal noise with
//! covariance `Q`, measurement noise with covariance `N + I` (channel noise
//! plus the vacuum floor of the reference wave) and cross covariance `T⁺`.
//! Simulating that surrogate with Euler–Maruyama and running the synthesized
//! filter on it gives an empirical error covariance that must match `P(t)`.
//!
//! Every trajectory draws from its own ChaCha8 stream, selected by the
//! trajectory index under the master seed. Trajectories are processed in
//! fixed-size chunks and chunk sums are merged in index order, so results are
//! bit-identical for any number of worker threads.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{factor_psd, min_eigenvalue_hermitian, ComplexMatrix, PSD_CLAMP_TOL};
use crate::model::{ChannelModel, SignalModel};
use crate::riccati::FilterSynthesis;

/// Trajectories per work unit. Part of the determinism contract: changing it
/// changes the floating-point summation order.
pub const CHUNK_SIZE: usize = 64;

/// Per-unit-time covariance of the stacked (signal, measurement) increments.
#[derive(Debug, Clone)]
pub struct SurrogateNoiseSpec {
    /// `[[Q, T⁺], [T, N+I]]`
    pub joint: ComplexMatrix,
    /// `L` with `L L⁺ = joint`.
    pub factor: ComplexMatrix,
    m: usize,
}

impl SurrogateNoiseSpec {
    /// Noise dimension `m`; increments have `2m` entries.
    pub fn m(&self) -> usize {
        self.m
    }
}

/// Builds the classical surrogate noise covariance, rejecting models with
/// no classical realization.
pub fn build_noise_spec(sig: &SignalModel, ch: &ChannelModel) -> Result<SurrogateNoiseSpec> {
    let joint = ch.joint_noise_covariance(sig)?;
    let min = min_eigenvalue_hermitian(&joint)?;
    if min < -PSD_CLAMP_TOL * joint.frobenius_norm() {
        return Err(Error::NoClassicalRealization {
            min_eigenvalue: min,
        });
    }
    let factor = factor_psd(&joint)?;
    Ok(SurrogateNoiseSpec {
        joint,
        factor,
        m: sig.m(),
    })
}

/// Standard circular complex normal, `E|z|² = 1`.
fn circular_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// One pair of increments `(dW_sig, dW_meas)` with `E[dW dW⁺] = joint·dt`
/// and vanishing pseudo-covariance.
pub fn sample_increments<R: Rng + ?Sized>(
    spec: &SurrogateNoiseSpec,
    dt: f64,
    rng: &mut R,
) -> (Vec<Complex64>, Vec<Complex64>) {
    let size = 2 * spec.m;
    let z: Vec<Complex64> = (0..size).map(|_| circular_normal(rng)).collect();
    let mut w = vec![Complex64::new(0.0, 0.0); size];
    matvec(
        &mut w,
        spec.factor.as_nalgebra().as_slice(),
        size,
        size,
        &z,
        dt.sqrt(),
    );
    let meas = w.split_off(spec.m);
    (w, meas)
}

/// `out = scale · M v`, with `M` stored column-major (nalgebra layout).
#[inline]
fn matvec(
    out: &mut [Complex64],
    m: &[Complex64],
    rows: usize,
    cols: usize,
    v: &[Complex64],
    scale: f64,
) {
    for o in out.iter_mut() {
        *o = Complex64::new(0.0, 0.0);
    }
    for (j, &vj) in v.iter().enumerate().take(cols) {
        let col = &m[j * rows..(j + 1) * rows];
        for (o, &mij) in out.iter_mut().zip(col) {
            *o += mij * vj;
        }
    }
    if scale != 1.0 {
        for o in out.iter_mut() {
            *o *= scale;
        }
    }
}

/// Settings for [`simulate_bundle`].
#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub dt: f64,
    pub t_end: f64,
    pub n_traj: usize,
    pub seed: u64,
    /// Number of trajectories whose paths and measurement records are kept.
    pub keep_paths: usize,
    /// Each increment is built from this many sub-draws, so a run at `dt`
    /// with `2s` sub-draws shares its randomness with a run at `dt/2` with `s`.
    pub noise_substeps: usize,
}

impl SimulationConfig {
    pub fn new(dt: f64, t_end: f64, n_traj: usize, seed: u64) -> Self {
        Self {
            dt,
            t_end,
            n_traj,
            seed,
            keep_paths: 0,
            noise_substeps: 1,
        }
    }
}

/// Empirical statistics of one simulated ensemble.
#[derive(Debug, Clone)]
pub struct TrajectoryBundle {
    pub seed: u64,
    pub dt: f64,
    /// Checkpoint grid: the synthesis grid up to `t_end`.
    pub times: Vec<f64>,
    pub n_traj: usize,
    /// Signal paths on `times` for the first `keep_paths` trajectories.
    pub signal: Vec<Vec<Vec<Complex64>>>,
    /// Filter estimates on `times` for the kept trajectories.
    pub estimate: Vec<Vec<Vec<Complex64>>>,
    /// Heterodyne increments `dy` at every `dt` step for the kept trajectories.
    pub records: Vec<Vec<Vec<Complex64>>>,
    /// `Ê[(s − x)(s − x)⁺]` on `times`.
    pub residual_second_moment: Vec<ComplexMatrix>,
    /// `tr Ê[(s − x)(s − x)⁺]` on `times`.
    pub empirical_trace: Vec<f64>,
    /// Standard error of `empirical_trace`; `None` with a single trajectory.
    pub standard_error: Vec<Option<f64>>,
    /// `tr P` on `times`.
    pub riccati_trace: Vec<f64>,
    /// Per-trajectory average of `|s − x|²` over all `dt` steps in `(0, t_end]`.
    pub time_averaged_residual: Vec<f64>,
}

impl TrajectoryBundle {
    /// `(empirical − Riccati)/SE` per checkpoint.
    pub fn z_scores(&self) -> Vec<Option<f64>> {
        self.empirical_trace
            .iter()
            .zip(&self.riccati_trace)
            .zip(&self.standard_error)
            .map(|((e, r), se)| se.filter(|&s| s > 0.0).map(|s| (e - r) / s))
            .collect()
    }

    /// Index of checkpoint `t`, if it is on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-9 * t.abs().max(1.0))
    }

    /// Mean of [`Self::time_averaged_residual`].
    pub fn mean_time_averaged_residual(&self) -> f64 {
        self.time_averaged_residual.iter().sum::<f64>() / self.n_traj as f64
    }
}

/// Per-step constants, flattened column-major for the hot loop.
struct StepPlan {
    segment: usize,
    gain: Vec<Complex64>,
}

struct SegmentPlan {
    a: Vec<Complex64>,
    j: Vec<Complex64>,
    f: Vec<Complex64>,
    noise_factor: Vec<Complex64>,
}

struct Plan {
    n: usize,
    m: usize,
    dt: f64,
    steps: Vec<StepPlan>,
    segments: Vec<SegmentPlan>,
    initial_factor: Vec<Complex64>,
    /// Step index after which each checkpoint is recorded (0 means t = 0).
    record_steps: Vec<usize>,
    record_times: Vec<f64>,
    gain_scales: Vec<f64>,
    keep_paths: usize,
    noise_substeps: usize,
}

fn flat(m: &ComplexMatrix) -> Vec<Complex64> {
    m.as_nalgebra().as_slice().to_vec()
}

fn whole_multiple(value: f64, unit: f64) -> Option<usize> {
    let ratio = value / unit;
    let rounded = ratio.round();
    (rounded >= 1.0 && (ratio - rounded).abs() <= 1e-9 * ratio.max(1.0)).then_some(rounded as usize)
}

fn build_plan(
    synth: &FilterSynthesis,
    cfg: &SimulationConfig,
    gain_scales: &[f64],
) -> Result<Plan> {
    if !(cfg.dt > 0.0) || !(cfg.t_end > 0.0) {
        return Err(Error::InvalidParameter(
            "dt and t_end must be positive".into(),
        ));
    }
    if cfg.n_traj == 0 {
        return Err(Error::InvalidParameter("n_traj must be at least 1".into()));
    }
    if cfg.noise_substeps == 0 {
        return Err(Error::InvalidParameter(
            "noise_substeps must be at least 1".into(),
        ));
    }
    let per_step = whole_multiple(synth.step, cfg.dt).ok_or_else(|| {
        Error::GridMisaligned(format!(
            "dt = {} does not divide the synthesis step {}",
            cfg.dt, synth.step
        ))
    })?;
    if cfg.t_end > synth.horizon() * (1.0 + 1e-12) {
        return Err(Error::GridMisaligned(format!(
            "t_end = {} exceeds the synthesis horizon {}",
            cfg.t_end,
            synth.horizon()
        )));
    }
    let grid_steps = whole_multiple(cfg.t_end, synth.step).ok_or_else(|| {
        Error::GridMisaligned(format!(
            "t_end = {} is not on the synthesis grid",
            cfg.t_end
        ))
    })?;
    let total_steps = grid_steps * per_step;

    let schedule = synth.schedule();
    let segments = schedule
        .segments()
        .iter()
        .map(|seg| {
            let spec = build_noise_spec(&seg.signal, &seg.channel)?;
            Ok(SegmentPlan {
                a: flat(&seg.signal.a),
                j: flat(&seg.signal.j),
                f: flat(&seg.channel.f),
                noise_factor: flat(&spec.factor),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let steps = (0..total_steps)
        .map(|k| {
            let t0 = k as f64 * cfg.dt;
            let t1 = (k + 1) as f64 * cfg.dt;
            let segment = schedule.segment_index_for_step(t0, t1);
            let gain = synth.gain_at(t0)?;
            Ok(StepPlan {
                segment,
                gain: flat(&gain),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let initial = factor_psd(&schedule.initial().signal.r0)?;
    Ok(Plan {
        n: synth.n(),
        m: synth.m(),
        dt: cfg.dt,
        steps,
        segments,
        initial_factor: flat(&initial),
        record_steps: (0..=grid_steps).map(|i| i * per_step).collect(),
        record_times: synth.times[..=grid_steps].to_vec(),
        gain_scales: gain_scales.to_vec(),
        keep_paths: cfg.keep_paths.min(cfg.n_traj),
        noise_substeps: cfg.noise_substeps,
    })
}

/// Sums over one chunk of trajectories.
struct ChunkSums {
    /// `[filter][record]` sums of `e e⁺` (column-major `n×n`); filter 0 only.
    outer: Vec<Vec<Complex64>>,
    /// `[filter][record]` sums of `|e|²` and `|e|⁴`.
    trace: Vec<Vec<f64>>,
    trace_sq: Vec<Vec<f64>>,
    /// `[filter][trajectory in chunk]` time-averaged `|e|²`.
    averages: Vec<Vec<f64>>,
    signal: Vec<Vec<Vec<Complex64>>>,
    estimate: Vec<Vec<Vec<Complex64>>>,
    records: Vec<Vec<Vec<Complex64>>>,
}

fn run_chunk(plan: &Plan, seed: u64, first: usize, last: usize) -> ChunkSums {
    let (n, m) = (plan.n, plan.m);
    let filters = plan.gain_scales.len();
    let records = plan.record_steps.len();
    let zero = Complex64::new(0.0, 0.0);
    let mut sums = ChunkSums {
        outer: vec![vec![zero; records * n * n]; 1],
        trace: vec![vec![0.0; records]; filters],
        trace_sq: vec![vec![0.0; records]; filters],
        averages: vec![Vec::with_capacity(last - first); filters],
        signal: Vec::new(),
        estimate: Vec::new(),
        records: Vec::new(),
    };

    let mut s = vec![zero; n];
    let mut s_next = vec![zero; n];
    let mut xs = vec![vec![zero; n]; filters];
    let mut z = vec![zero; 2 * m];
    let mut w = vec![zero; 2 * m];
    let mut dy = vec![zero; m];
    let mut innov = vec![zero; m];
    let mut tmp_n = vec![zero; n];
    let mut tmp_n2 = vec![zero; n];
    let mut tmp_m = vec![zero; m];
    let mut err = vec![zero; n];
    let sqrt_dt = plan.dt.sqrt();
    let sub_scale = 1.0 / (plan.noise_substeps as f64).sqrt();

    for traj in first..last {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(traj as u64);
        let keep = traj < plan.keep_paths;
        let mut signal_path = Vec::new();
        let mut estimate_path = Vec::new();
        let mut record = Vec::new();

        for zi in z.iter_mut().take(n) {
            *zi = circular_normal(&mut rng);
        }
        matvec(&mut s, &plan.initial_factor, n, n, &z[..n], 1.0);
        for x in xs.iter_mut() {
            x.fill(zero);
        }
        let mut running = vec![0.0; filters];
        let mut next_record = 0;

        for k in 0..=plan.steps.len() {
            if next_record < records && plan.record_steps[next_record] == k {
                for (fi, x) in xs.iter().enumerate() {
                    let mut tr = 0.0;
                    for i in 0..n {
                        err[i] = s[i] - x[i];
                        tr += err[i].norm_sqr();
                    }
                    sums.trace[fi][next_record] += tr;
                    sums.trace_sq[fi][next_record] += tr * tr;
                    if fi == 0 {
                        let block =
                            &mut sums.outer[0][next_record * n * n..(next_record + 1) * n * n];
                        for c in 0..n {
                            for r in 0..n {
                                block[c * n + r] += err[r] * err[c].conj();
                            }
                        }
                    }
                }
                if keep {
                    signal_path.push(s.clone());
                    estimate_path.push(xs[0].clone());
                }
                next_record += 1;
            }
            if k == plan.steps.len() {
                break;
            }

            let step = &plan.steps[k];
            let seg = &plan.segments[step.segment];
            z.fill(zero);
            for _ in 0..plan.noise_substeps {
                for zi in z.iter_mut() {
                    *zi += circular_normal(&mut rng);
                }
            }
            if plan.noise_substeps > 1 {
                for zi in z.iter_mut() {
                    *zi *= sub_scale;
                }
            }
            matvec(&mut w, &seg.noise_factor, 2 * m, 2 * m, &z, sqrt_dt);
            let (dw_sig, dw_meas) = w.split_at(m);

            // dy = F s dt + dW_meas
            matvec(&mut dy, &seg.f, m, n, &s, plan.dt);
            for (d, e) in dy.iter_mut().zip(dw_meas) {
                *d += e;
            }
            // s ← s − A s dt + J dW_sig
            matvec(&mut tmp_n, &seg.a, n, n, &s, plan.dt);
            matvec(&mut tmp_n2, &seg.j, n, m, dw_sig, 1.0);
            for i in 0..n {
                s_next[i] = s[i] - tmp_n[i] + tmp_n2[i];
            }

            for (fi, x) in xs.iter_mut().enumerate() {
                // x ← x − A x dt + g K (dy − F x dt)
                matvec(&mut tmp_m, &seg.f, m, n, x, plan.dt);
                for i in 0..m {
                    innov[i] = dy[i] - tmp_m[i];
                }
                matvec(&mut tmp_n, &seg.a, n, n, x, plan.dt);
                matvec(&mut tmp_n2, &step.gain, n, m, &innov, plan.gain_scales[fi]);
                let mut tr = 0.0;
                for i in 0..n {
                    x[i] = x[i] - tmp_n[i] + tmp_n2[i];
                    tr += (s_next[i] - x[i]).norm_sqr();
                }
                running[fi] += tr;
            }
            std::mem::swap(&mut s, &mut s_next);
            if keep {
                record.push(dy.clone());
            }
        }

        let steps = plan.steps.len().max(1) as f64;
        for (fi, total) in running.into_iter().enumerate() {
            sums.averages[fi].push(total / steps);
        }
        if keep {
            sums.signal.push(signal_path);
            sums.estimate.push(estimate_path);
            sums.records.push(record);
        }
    }
    sums
}

struct EnsembleResult {
    times: Vec<f64>,
    outer: Vec<Complex64>,
    trace: Vec<Vec<f64>>,
    trace_sq: Vec<Vec<f64>>,
    averages: Vec<Vec<f64>>,
    signal: Vec<Vec<Vec<Complex64>>>,
    estimate: Vec<Vec<Vec<Complex64>>>,
    records: Vec<Vec<Vec<Complex64>>>,
}

fn run_ensemble(
    synth: &FilterSynthesis,
    cfg: &SimulationConfig,
    gain_scales: &[f64],
) -> Result<EnsembleResult> {
    let plan = build_plan(synth, cfg, gain_scales)?;
    let chunks: Vec<(usize, usize)> = (0..cfg.n_traj)
        .step_by(CHUNK_SIZE)
        .map(|start| (start, (start + CHUNK_SIZE).min(cfg.n_traj)))
        .collect();
    let partial: Vec<ChunkSums> = chunks
        .par_iter()
        .map(|&(a, b)| run_chunk(&plan, cfg.seed, a, b))
        .collect();

    let (n, records, filters) = (plan.n, plan.record_steps.len(), gain_scales.len());
    let mut out = EnsembleResult {
        times: plan.record_times.clone(),
        outer: vec![Complex64::new(0.0, 0.0); records * n * n],
        trace: vec![vec![0.0; records]; filters],
        trace_sq: vec![vec![0.0; records]; filters],
        averages: vec![Vec::with_capacity(cfg.n_traj); filters],
        signal: Vec::new(),
        estimate: Vec::new(),
        records: Vec::new(),
    };
    for chunk in partial {
        for (acc, v) in out.outer.iter_mut().zip(&chunk.outer[0]) {
            *acc += v;
        }
        for fi in 0..filters {
            for r in 0..records {
                out.trace[fi][r] += chunk.trace[fi][r];
                out.trace_sq[fi][r] += chunk.trace_sq[fi][r];
            }
            out.averages[fi].extend_from_slice(&chunk.averages[fi]);
        }
        out.signal.extend(chunk.signal);
        out.estimate.extend(chunk.estimate);
        out.records.extend(chunk.records);
    }
    Ok(out)
}

fn standard_error(sum: f64, sum_sq: f64, count: usize) -> Option<f64> {
    if count < 2 {
        return None;
    }
    let n = count as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Some((var / n).sqrt())
}

/// Simulates the surrogate signal, its heterodyne record and the filter.
pub fn simulate_bundle(
    synth: &FilterSynthesis,
    cfg: &SimulationConfig,
) -> Result<TrajectoryBundle> {
    bundle_with_gain_scale(synth, cfg, 1.0)
}

/// [`simulate_bundle`] with the gain multiplied by `scale`.
pub fn bundle_with_gain_scale(
    synth: &FilterSynthesis,
    cfg: &SimulationConfig,
    scale: f64,
) -> Result<TrajectoryBundle> {
    let res = run_ensemble(synth, cfg, &[scale])?;
    let n = synth.n();
    let count = cfg.n_traj as f64;
    let records = res.times.len();
    let residual_second_moment = (0..records)
        .map(|r| {
            let block = &res.outer[r * n * n..(r + 1) * n * n];
            let m = nalgebra::DMatrix::from_column_slice(n, n, block) / Complex64::new(count, 0.0);
            ComplexMatrix::from_nalgebra(m).hermitian_part()
        })
        .collect();
    let empirical_trace = res.trace[0].iter().map(|s| s / count).collect();
    let standard_error = (0..records)
        .map(|r| standard_error(res.trace[0][r], res.trace_sq[0][r], cfg.n_traj))
        .collect();
    let riccati_trace = synth.trace_error[..records].to_vec();
    Ok(TrajectoryBundle {
        seed: cfg.seed,
        dt: cfg.dt,
        times: res.times,
        n_traj: cfg.n_traj,
        signal: res.signal,
        estimate: res.estimate,
        records: res.records,
        residual_second_moment,
        empirical_trace,
        standard_error,
        riccati_trace,
        time_averaged_residual: res.averages.into_iter().next().unwrap_or_default(),
    })
}

/// Outcome of a common-random-numbers gain perturbation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PerturbationReport {
    pub epsilon: f64,
    /// Mean time-averaged residual trace with the synthesized gain.
    pub baseline: f64,
    /// Same with gain `(1 + ε)K`.
    pub perturbed: f64,
    /// Standard error of the paired difference.
    pub paired_standard_error: f64,
    /// `(perturbed − baseline)/paired_standard_error`; zero when both agree.
    pub significance: f64,
}

/// Runs the synthesized filter and the filter with gain `(1+ε)K` on the
/// same trajectories and compares time-averaged residual traces.
pub fn gain_perturbation_test(
    synth: &FilterSynthesis,
    cfg: &SimulationConfig,
    epsilon: f64,
) -> Result<PerturbationReport> {
    let res = run_ensemble(synth, cfg, &[1.0, 1.0 + epsilon])?;
    let count = cfg.n_traj as f64;
    let base = &res.averages[0];
    let pert = &res.averages[1];
    let baseline = base.iter().sum::<f64>() / count;
    let perturbed = pert.iter().sum::<f64>() / count;
    let diffs: Vec<f64> = pert.iter().zip(base).map(|(p, b)| p - b).collect();
    let sum: f64 = diffs.iter().sum();
    let sum_sq: f64 = diffs.iter().map(|d| d * d).sum();
    let se = standard_error(sum, sum_sq, cfg.n_traj).unwrap_or(0.0);
    let mean_diff = sum / count;
    let significance = if mean_diff == 0.0 {
        0.0
    } else if se > 0.0 {
        mean_diff / se
    } else {
        mean_diff.signum() * f64::INFINITY
    };
    Ok(PerturbationReport {
        epsilon,
        baseline,
        perturbed,
        paired_standard_error: se,
        significance,
    })
}
