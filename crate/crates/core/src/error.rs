use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ensemble of {m} particles exceeds the exact W2 cap of {cap}; use w2_sliced")]
    ExactW2Cap { m: usize, cap: usize },

    #[error("non-finite value at step {step}: {what}")]
    NonFinite { step: usize, what: String },

    #[error("divergence at step {step}: {what}")]
    Divergence { step: usize, what: String },

    #[error("label {index} is not one-hot")]
    NotOneHot { index: usize },

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
