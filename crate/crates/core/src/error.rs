//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes are inconsistent with the operation's contract.
    #[error("shape error: {0}")]
    Shape(String),

    /// A NaN or infinity was produced where all values must stay finite.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Bad configuration or command-line input.
    #[error("config error: {0}")]
    Config(String),

    /// Operation not defined for the requested model variant.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Malformed on-disk data (GTF, JSONL, CSV, checkpoints).
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
