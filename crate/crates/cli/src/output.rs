use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use quantum_kalman::model::MatrixJson;
use quantum_kalman::riccati::FilterSynthesis;
use quantum_kalman::simulate::TrajectoryBundle;
use quantum_kalman::ComplexMatrix;
use serde::Serialize;

/// Marker for values that cannot be computed, such as a standard error from
/// a single trajectory.
pub const UNAVAILABLE: &str = "NA";

/// Twelve significant digits in scientific notation. Negative zero prints as
/// zero so reruns diff cleanly.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        return UNAVAILABLE.to_string();
    }
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.11e}")
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| UNAVAILABLE.to_string(), num)
}

fn matrix_header(out: &mut Vec<String>, name: &str, rows: usize, cols: usize) {
    for i in 1..=rows {
        for j in 1..=cols {
            out.push(format!("{name}_{i}_{j}_re"));
            out.push(format!("{name}_{i}_{j}_im"));
        }
    }
}

fn push_matrix(out: &mut Vec<String>, m: &ComplexMatrix) {
    for z in m.row_major() {
        out.push(num(z.re));
        out.push(num(z.im));
    }
}

pub fn riccati_csv(synth: &FilterSynthesis) -> String {
    let (n, m) = (synth.n(), synth.m());
    let mut header = vec!["t".to_string()];
    matrix_header(&mut header, "P", n, n);
    header.push("trace_error".into());
    matrix_header(&mut header, "K", n, m);

    let mut csv = header.join(",");
    csv.push('\n');
    for i in 0..synth.len() {
        let mut row = vec![num(synth.times[i])];
        push_matrix(&mut row, &synth.p[i]);
        row.push(num(synth.trace_error[i]));
        push_matrix(&mut row, &synth.k[i]);
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    csv
}

#[derive(Serialize)]
pub struct SynthesisJson {
    pub t_end: f64,
    pub step: f64,
    pub n: usize,
    pub m: usize,
    #[serde(rename = "P")]
    pub p: MatrixJson,
    #[serde(rename = "K")]
    pub k: MatrixJson,
    #[serde(rename = "B")]
    pub b: MatrixJson,
    pub trace_error: f64,
    pub stationarity_residual: f64,
    pub richardson_error_estimate: f64,
}

impl SynthesisJson {
    pub fn new(synth: &FilterSynthesis) -> Self {
        let last = synth.len() - 1;
        Self {
            t_end: synth.horizon(),
            step: synth.step,
            n: synth.n(),
            m: synth.m(),
            p: MatrixJson::from_matrix(&synth.p[last]),
            k: MatrixJson::from_matrix(&synth.k[last]),
            b: MatrixJson::from_matrix(&synth.b[last]),
            trace_error: synth.trace_error[last],
            stationarity_residual: synth.stationarity_residual(),
            richardson_error_estimate: synth.error_estimate,
        }
    }
}

/// One checkpoint of the Monte-Carlo comparison. Missing statistics
/// serialize as `null`.
#[derive(Debug, Clone, Serialize)]
pub struct CheckpointRow {
    pub t: f64,
    pub empirical_trace: f64,
    pub standard_error: Option<f64>,
    pub riccati_trace: f64,
    pub z_score: Option<f64>,
}

pub fn checkpoint_rows(bundle: &TrajectoryBundle, indices: &[usize]) -> Vec<CheckpointRow> {
    let z = bundle.z_scores();
    indices
        .iter()
        .map(|&i| CheckpointRow {
            t: bundle.times[i],
            empirical_trace: bundle.empirical_trace[i],
            standard_error: bundle.standard_error[i],
            riccati_trace: bundle.riccati_trace[i],
            z_score: z[i],
        })
        .collect()
}

pub fn summary_csv(rows: &[CheckpointRow]) -> String {
    let mut csv = String::from("t,empirical_trace,standard_error,riccati_trace,z_score\n");
    for r in rows {
        writeln!(
            csv,
            "{},{},{},{},{}",
            num(r.t),
            num(r.empirical_trace),
            opt(r.standard_error),
            num(r.riccati_trace),
            opt(r.z_score)
        )
        .expect("writing to a String cannot fail");
    }
    csv
}

/// Heterodyne record of one trajectory; row `k` holds the increment over
/// `[k·dt, (k+1)·dt]` stamped with its end time.
pub fn record_csv(record: &[Vec<quantum_kalman::Complex64>], dt: f64) -> String {
    let m = record.first().map_or(0, Vec::len);
    let mut header = vec!["t".to_string()];
    for i in 1..=m {
        header.push(format!("dy{i}_re"));
        header.push(format!("dy{i}_im"));
    }
    let mut csv = header.join(",");
    csv.push('\n');
    for (k, dy) in record.iter().enumerate() {
        let mut row = vec![num((k + 1) as f64 * dt)];
        for z in dy {
            row.push(num(z.re));
            row.push(num(z.im));
        }
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    csv
}

pub fn write(dir: &Path, name: &str, contents: &str) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)
}

pub fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output types always serialize");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(num(1.0 / 3.0), "3.33333333333e-1");
        assert_eq!(num(-2.5e7), "-2.50000000000e7");
        assert_eq!(num(-0.0), "0.00000000000e0");
        assert_eq!(num(f64::NAN), "NA");
        assert_eq!(opt(None), "NA");
    }

    #[test]
    fn matrix_columns_are_row_major() {
        let mut h = Vec::new();
        matrix_header(&mut h, "K", 2, 1);
        assert_eq!(h, ["K_1_1_re", "K_1_1_im", "K_2_1_re", "K_2_1_im"]);
    }
}
