//! Crate-wide error type.
//!
//! Shape mismatches inside tensor arithmetic are programmer errors and panic
//! with messages naming both shapes; everything a caller can plausibly get
//! wrong at runtime (bad configuration, malformed files, diverging training)
//! comes back as an [`Error`].

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an API precondition (bad argument, missing state).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Training produced a non-finite loss and cannot continue.
    #[error("training diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },

    /// On-disk bytes did not match the expected layout.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
