use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not Hermitian (max asymmetry {0:e})")]
    NotHermitian(f64),

    #[error("transition matrix is reducible, no unique stationary distribution")]
    ReducibleChain,

    #[error("power iteration did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("replay memory holds {have} experiences, minibatch needs {need}")]
    InsufficientExperience { have: usize, need: usize },

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{}:{line}: {msg}", path.display())]
    Config {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
