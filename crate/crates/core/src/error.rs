//! Error type shared by every module of the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("topology: {0}")]
    Topology(String),

    /// The weight matrix would have an eigenvalue at or below -1.
    #[error("weight scaling: smallest eigenvalue {delta_n:.6} <= -1, use scale <= {suggested_scale:.6}")]
    Scaling { delta_n: f64, suggested_scale: f64 },

    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("invalid label {0}")]
    InvalidLabel(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("gradient memory is empty")]
    EmptyMemory,

    #[error("interpolated gradient requested after {count} samples, need at least 2")]
    NotWarmedUp { count: usize },

    #[error("configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("non-finite parameter at round {round}, learner {learner}, replicate {replicate}")]
    NonFinite { round: usize, learner: usize, replicate: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("message protocol: {0}")]
    Protocol(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by the inputs rather than by the run itself.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::NonFinite { .. } | Error::Io(_) | Error::Singular(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
