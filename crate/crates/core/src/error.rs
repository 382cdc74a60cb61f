use std::path::PathBuf;

use thiserror::Error;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum PlomError {
    #[error("malformed input at row {row}, column {col}: {msg}")]
    Format { row: usize, col: usize, msg: String },

    #[error("realizations {first} and {second} are identical")]
    DuplicatePoint { first: usize, second: usize },

    #[error("non-finite value at feature {feature}, realization {sample}")]
    NonFinite { feature: usize, sample: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid dimension: {0}")]
    Dimension(String),

    #[error("metadata schema mismatch: {0}")]
    Schema(String),

    #[error("inconsistent archive: {0}")]
    Consistency(String),

    #[error(
        "kernel is not numerically positive definite: realizations {first} and {second} are \
         {distance:e} apart"
    )]
    Concentration { first: usize, second: usize, distance: f64 },

    #[error("eigensolver failure: {0}")]
    EigenSolver(String),

    #[error("m-hat profile is not non-increasing over the bandwidth grid: {0}")]
    NonMonotone(String),

    #[error("no admissible bandwidth in the scanned range: {0}")]
    ScanRange(String),

    #[error("integrator diverged at step {step} of chain {chain}")]
    Divergence { chain: usize, step: usize },

    #[error("enumeration of {count} multi-indices exceeds the cap (N = {n}, cap = {cap})")]
    EnumerationSize { n: usize, cap: usize, count: u128 },

    #[error("numerical inconsistency: {0}")]
    NumericalInconsistency(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing input file {}", .0.display())]
    MissingInput(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl PlomError {
    pub fn kind(&self) -> ErrorKind {
        use PlomError::*;
        match self {
            Config(_) | MissingInput(_) | EnumerationSize { .. } => ErrorKind::Config,
            Format { .. }
            | DuplicatePoint { .. }
            | NonFinite { .. }
            | Shape(_)
            | Dimension(_)
            | Schema(_)
            | Consistency(_) => ErrorKind::Data,
            Concentration { .. }
            | EigenSolver(_)
            | NonMonotone(_)
            | ScanRange(_)
            | Divergence { .. }
            | NumericalInconsistency(_) => ErrorKind::Numerical,
            Io { .. } | Json { .. } => ErrorKind::Io,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PlomError::Io { path: path.into(), source }
    }
}

pub type Result<T, E = PlomError> = std::result::Result<T, E>;
