//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Vector or matrix shape does not match the problem dimensions.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A NaN or infinity showed up where a finite value is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Invalid configuration (bad hyperparameter, missing field, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Estimator update called out of order (checkpoint vs recursive step).
    #[error("sequencing error: {0}")]
    Sequencing(String),

    /// Dataset loading failure with the offending location when known.
    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// True for errors that should map to the CLI's config-error exit code.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Data(_))
    }
}
