use std::path::PathBuf;

/// Errors produced by the estimation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("duplicate directions at indices {0} and {1}")]
    DuplicateDirections(usize, usize),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("path {index}: {source}")]
    Path {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("conditional variance {variance:e} at coordinate {index} is not positive")]
    ConditionalVariance { index: usize, variance: f64 },

    #[error("unsupported schema: {0}")]
    Schema(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for failures of the numerics (as opposed to bad inputs or files).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Factorization(_)
            | Error::NonFiniteState { .. }
            | Error::NonFiniteLoss { .. }
            | Error::ConditionalVariance { .. } => true,
            Error::Path { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
