use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the pipeline.
///
/// Caller bugs (`InvalidEntity`, `DimensionMismatch`, `InvalidArgument`) are kept
/// apart from `Provider`, which wraps transport or backend failures that may
/// succeed when retried.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("entity id {0} is not present in the graph")]
    InvalidEntity(u32),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("provider error: {message}")]
    Provider { message: String, retriable: bool },

    #[error("non-finite loss {loss} at epoch {epoch}")]
    NonFiniteLoss { epoch: usize, loss: f64 },
}

impl Error {
    pub fn provider(message: impl Into<String>) -> Self {
        Error::Provider {
            message: message.into(),
            retriable: true,
        }
    }

    pub fn provider_fatal(message: impl Into<String>) -> Self {
        Error::Provider {
            message: message.into(),
            retriable: false,
        }
    }

    /// True for failures where repeating the same request may succeed.
    pub fn is_retriable(&self) -> bool {
        matches!(
            self,
            Error::Provider {
                retriable: true,
                ..
            }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
