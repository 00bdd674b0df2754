// SPDX-License-Identifier: MIT OR Apache-2.0

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MosegError>;

#[derive(Debug, Error)]
pub enum MosegError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid window ({start}, {end}] for n = {n}: {reason}")]
    InvalidWindow {
        start: usize,
        end: usize,
        n: usize,
        reason: &'static str,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("undefined quantity: {0}")]
    Undefined(String),
    #[error("malformed data at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MosegError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        MosegError::InvalidParameter(msg.into())
    }

    /// True for errors caused by the input data rather than by configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            MosegError::NonFinite(_)
                | MosegError::Parse { .. }
                | MosegError::Csv(_)
                | MosegError::Io(_)
                | MosegError::DimensionMismatch(_)
        )
    }
}
