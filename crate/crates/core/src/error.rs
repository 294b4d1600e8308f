use thiserror::Error;

use crate::env::EnvError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { iteration: usize, what: String },
    #[error("observations are already normalized")]
    DoubleNormalization,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Numerics(_) => "numerics",
            Error::Env(_) => "env",
            Error::Config(_) => "config",
            Error::NonFinite { .. } => "non_finite",
            Error::DoubleNormalization => "double_normalization",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
