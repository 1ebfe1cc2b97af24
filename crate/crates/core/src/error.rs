use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("singular covariance: {0}")]
    Singular(String),

    #[error(
        "optimizer did not converge after {iterations} iterations \
         (best point {best_point:?}, objective {best_value})"
    )]
    NoConvergence {
        iterations: usize,
        best_point: Vec<f64>,
        best_value: f64,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
