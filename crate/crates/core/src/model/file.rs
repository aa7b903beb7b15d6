//! JSON model files.
//!
//! Two layouts are accepted. The general form lists every matrix:
//!
//! ```json
//! {"n": 1, "m": 1, "hbar": 1.0,
//!  "A": [[0.5, 1.0]], "J": [[1.0, 0.0]], "Q": [[0.5, 0.0]], "R0": [[2.0, 0.0]],
//!  "C0": [[1.0, 0.0]], "F": [[-1.0, 0.0]], "N": [[0.5, 0.0]], "T": [[0.5, 0.0]],
//!  "D": [[1.0, 0.0]]}
//! ```
//!
//! Each matrix is a row-major array of `[re, im]` pairs. An array of rows
//! (each an array of pairs) is accepted on input as well. The oscillator
//! shorthand is `{"oscillator": {"omega", "gamma", "nu", "sigma0", "hbar"}}`.
//! Unknown fields are rejected.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{oscillator_to_general, ChannelModel, OscillatorModel, SignalModel};
use crate::error::{Error, Result};
use crate::matrix::ComplexMatrix;

/// A complex matrix as stored in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixJson {
    Flat(Vec<[f64; 2]>),
    Rows(Vec<Vec<[f64; 2]>>),
}

impl MatrixJson {
    pub fn from_matrix(m: &ComplexMatrix) -> Self {
        MatrixJson::Flat(m.row_major().into_iter().map(|z| [z.re, z.im]).collect())
    }

    pub fn to_matrix(&self, name: &str, rows: usize, cols: usize) -> Result<ComplexMatrix> {
        let flat: Vec<Complex64> = match self {
            MatrixJson::Flat(v) => v.iter().map(|p| Complex64::new(p[0], p[1])).collect(),
            MatrixJson::Rows(r) => {
                if r.len() != rows || r.iter().any(|row| row.len() != cols) {
                    return Err(Error::ModelFile(format!(
                        "{name}: expected {rows} rows of {cols} entries"
                    )));
                }
                r.iter()
                    .flatten()
                    .map(|p| Complex64::new(p[0], p[1]))
                    .collect()
            }
        };
        ComplexMatrix::from_row_major(rows, cols, &flat).map_err(|_| {
            Error::ModelFile(format!(
                "{name}: expected {} entries, found {}",
                rows * cols,
                flat.len()
            ))
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModelFile {
    n: Option<usize>,
    m: Option<usize>,
    hbar: Option<f64>,
    #[serde(rename = "A")]
    a: Option<MatrixJson>,
    #[serde(rename = "J")]
    j: Option<MatrixJson>,
    #[serde(rename = "Q")]
    q: Option<MatrixJson>,
    #[serde(rename = "R0")]
    r0: Option<MatrixJson>,
    #[serde(rename = "C0")]
    c0: Option<MatrixJson>,
    #[serde(rename = "F")]
    f: Option<MatrixJson>,
    #[serde(rename = "N")]
    noise: Option<MatrixJson>,
    #[serde(rename = "T")]
    t: Option<MatrixJson>,
    #[serde(rename = "D")]
    d: Option<MatrixJson>,
    oscillator: Option<OscillatorModel>,
}

/// Oscillator shorthand wrapper, `{"oscillator": {...}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillatorFile {
    pub oscillator: OscillatorModel,
}

/// General-form model file.
#[derive(Debug, Clone, Serialize)]
pub struct GeneralFile {
    pub n: usize,
    pub m: usize,
    pub hbar: f64,
    #[serde(rename = "A")]
    pub a: MatrixJson,
    #[serde(rename = "J")]
    pub j: MatrixJson,
    #[serde(rename = "Q")]
    pub q: MatrixJson,
    #[serde(rename = "R0")]
    pub r0: MatrixJson,
    #[serde(rename = "C0")]
    pub c0: MatrixJson,
    #[serde(rename = "F")]
    pub f: MatrixJson,
    #[serde(rename = "N")]
    pub noise: MatrixJson,
    #[serde(rename = "T")]
    pub t: MatrixJson,
    #[serde(rename = "D")]
    pub d: MatrixJson,
}

/// A parsed model file.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum ModelFile {
    General(GeneralFile),
    Oscillator(OscillatorModel),
}

impl ModelFile {
    /// Parses a model document. Syntax errors carry line and column.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: RawModelFile = serde_json::from_str(text).map_err(|e| {
            let full = e.to_string();
            let what = full.split(" at line ").next().unwrap_or(&full);
            Error::ModelFile(format!("line {}, column {}: {what}", e.line(), e.column()))
        })?;
        if let Some(osc) = raw.oscillator {
            let extra = raw.n.is_some()
                || raw.m.is_some()
                || raw.hbar.is_some()
                || raw.a.is_some()
                || raw.j.is_some()
                || raw.q.is_some()
                || raw.r0.is_some()
                || raw.c0.is_some()
                || raw.f.is_some()
                || raw.noise.is_some()
                || raw.t.is_some()
                || raw.d.is_some();
            if extra {
                return Err(Error::ModelFile(
                    "oscillator shorthand cannot be combined with general fields".into(),
                ));
            }
            return Ok(ModelFile::Oscillator(osc));
        }
        fn need<T>(name: &str, v: Option<T>) -> Result<T> {
            v.ok_or_else(|| Error::ModelFile(format!("missing field `{name}`")))
        }
        Ok(ModelFile::General(GeneralFile {
            n: need("n", raw.n)?,
            m: need("m", raw.m)?,
            hbar: need("hbar", raw.hbar)?,
            a: need("A", raw.a)?,
            j: need("J", raw.j)?,
            q: need("Q", raw.q)?,
            r0: need("R0", raw.r0)?,
            c0: need("C0", raw.c0)?,
            f: need("F", raw.f)?,
            noise: need("N", raw.noise)?,
            t: need("T", raw.t)?,
            d: need("D", raw.d)?,
        }))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ModelFile(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn from_models(sig: &SignalModel, ch: &ChannelModel) -> Self {
        ModelFile::General(GeneralFile {
            n: sig.n(),
            m: sig.m(),
            hbar: sig.hbar,
            a: MatrixJson::from_matrix(&sig.a),
            j: MatrixJson::from_matrix(&sig.j),
            q: MatrixJson::from_matrix(&sig.q),
            r0: MatrixJson::from_matrix(&sig.r0),
            c0: MatrixJson::from_matrix(&sig.c0),
            f: MatrixJson::from_matrix(&ch.f),
            noise: MatrixJson::from_matrix(&ch.n),
            t: MatrixJson::from_matrix(&ch.t),
            d: MatrixJson::from_matrix(&ch.d),
        })
    }

    pub fn to_json_string(&self) -> String {
        match self {
            ModelFile::General(g) => serde_json::to_string_pretty(g),
            ModelFile::Oscillator(o) => {
                serde_json::to_string_pretty(&OscillatorFile { oscillator: *o })
            }
        }
        .expect("model files always serialize")
    }

    pub fn oscillator(&self) -> Option<&OscillatorModel> {
        match self {
            ModelFile::Oscillator(o) => Some(o),
            ModelFile::General(_) => None,
        }
    }

    /// Builds and validates the signal/channel pair.
    pub fn to_models(&self) -> Result<(SignalModel, ChannelModel)> {
        match self {
            ModelFile::Oscillator(o) => oscillator_to_general(o),
            ModelFile::General(g) => {
                let (n, m) = (g.n, g.m);
                if n == 0 || m == 0 {
                    return Err(Error::ModelFile("n and m must be positive".into()));
                }
                let sig = SignalModel::new(
                    g.a.to_matrix("A", n, n)?,
                    g.j.to_matrix("J", n, m)?,
                    g.q.to_matrix("Q", m, m)?,
                    g.r0.to_matrix("R0", n, n)?,
                    g.c0.to_matrix("C0", n, n)?,
                    g.hbar,
                )?;
                let ch = ChannelModel::new(
                    &sig,
                    g.f.to_matrix("F", m, n)?,
                    g.noise.to_matrix("N", m, m)?,
                    g.t.to_matrix("T", m, m)?,
                    g.d.to_matrix("D", m, m)?,
                )?;
                Ok((sig, ch))
            }
        }
    }
}
