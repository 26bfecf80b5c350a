use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("singular model: smallest eigenvalue {min_eigenvalue:.3e} is below the floor {floor:.3e}")]
    SingularModel { min_eigenvalue: f64, floor: f64 },

    #[error("linear solve failed: relative residual {residual:.3e} exceeds {tolerance:.3e}")]
    SolveFailed { residual: f64, tolerance: f64 },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("backbone generation failed after {retries} attempts")]
    GenerationFailed { retries: usize },

    #[error("deterministic sequence exhausted at t={t} (only {frames} frames)")]
    SequenceExhausted { t: usize, frames: usize },

    #[error("mean transition matrix is undefined for deterministic sequences")]
    UnsupportedProcess,

    #[error("transition rule moved the token along a nonexistent edge {from} -> {to}")]
    SupportViolation { from: usize, to: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing trace: {0}")]
    MissingTrace(&'static str),

    #[error("non-finite value in metric `{metric}` at t={t}")]
    NonFinite { metric: String, t: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv { path: path.into(), source }
    }
}
