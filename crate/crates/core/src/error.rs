use thiserror::Error;

/// Errors raised by the estimators and their numeric kernel.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in observation {index}")]
    NonFinite { index: usize },

    #[error("matrix is not positive semi-definite (eigenvalue {eigenvalue:e})")]
    NotPsd { eigenvalue: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("covariance of the initialisation window is singular or nearly so; use a larger window")]
    Singular,

    #[error("KL target {target} is unreachable by varying {parameter}")]
    Unreachable { parameter: &'static str, target: f64 },

    #[error("observation {index} carries no ground-truth label")]
    MissingLabel { index: u64 },

    #[error("estimator is in {actual} mode, operation requires {expected} mode")]
    WrongMode {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("snapshot: {0}")]
    Snapshot(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
