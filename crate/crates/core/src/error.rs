use thiserror::Error;

/// Errors raised across the filter-synthesis pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not positive definite (minimum eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("not positive semidefinite (minimum eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("non-finite entry produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("nondemolition equation has no exact solution (residual {residual:e})")]
    NondemolitionUnsolvable { residual: f64 },

    #[error("no classical realization: joint noise covariance indefinite (minimum eigenvalue {min_eigenvalue:e})")]
    NoClassicalRealization { min_eigenvalue: f64 },

    #[error("posterior covariance lost positivity at t = {time} (minimum eigenvalue {min_eigenvalue:e})")]
    PositivityLost { time: f64, min_eigenvalue: f64 },

    #[error("interval [{start}, {end}] is outside the synthesis grid [0, {horizon}]")]
    OutsideGrid { start: f64, end: f64, horizon: f64 },

    #[error("grid misalignment: {0}")]
    GridMisaligned(String),

    #[error(
        "kernels are not adjacent: first ends at {first_end}, second starts at {second_start}"
    )]
    NotAdjacent { first_end: f64, second_start: f64 },

    #[error("model file: {0}")]
    ModelFile(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
