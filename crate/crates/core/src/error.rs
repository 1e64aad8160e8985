//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Vector length does not match the expected layout.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Invalid configuration or input data.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// A contact event stream that cannot be applied to its graph.
    #[error("inconsistent contact event at frame {frame}: {detail}")]
    EventConsistency { frame: u64, detail: String },

    /// Network-level failure talking to the contact-detection endpoint.
    #[error("vlm transport error: {0}")]
    VlmTransport(String),

    /// The endpoint answered with a non-2xx status.
    #[error("vlm endpoint returned status {status}: {body}")]
    VlmStatus { status: u16, body: String },

    /// The request did not complete within the configured timeout.
    #[error("vlm request timed out after {0} s")]
    VlmTimeout(f64),

    /// The endpoint reply did not follow the mandated output format.
    #[error("vlm response parse error: {0}")]
    VlmParse(String),

    /// Checkpoint or dataset file with an unsupported format version.
    #[error("format version mismatch: found {found}, expected {expected}")]
    FormatVersion { found: u32, expected: u32 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
