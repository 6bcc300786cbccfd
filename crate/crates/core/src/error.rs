use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = NpnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NpnError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid manifest field `{field}`: {reason}")]
    Manifest { field: String, reason: String },

    #[error("checksum mismatch for {}", path.display())]
    Checksum { path: PathBuf },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("non-finite {0} encountered during training")]
    NonFinite(&'static str),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl NpnError {
    pub(crate) fn dim(context: &'static str, expected: usize, found: usize) -> Self {
        NpnError::Dimension {
            context,
            expected,
            found,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        NpnError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NpnError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input rather than by a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            NpnError::Dimension { .. }
                | NpnError::InvalidParameter { .. }
                | NpnError::Manifest { .. }
                | NpnError::Checksum { .. }
                | NpnError::Format { .. }
        )
    }
}
