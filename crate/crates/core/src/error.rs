use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, BridgeError>;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("time {t} lies inside the clamped region above 1 - {t_clamp}")]
    ClampedTime { t: f64, t_clamp: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite state at integration step {step}")]
    Integration { step: usize },

    #[error("non-finite {what} at training step {step} ({objective})")]
    Training {
        step: usize,
        objective: String,
        what: &'static str,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl BridgeError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BridgeError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        BridgeError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by values blowing up rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            BridgeError::Integration { .. } | BridgeError::Training { .. } | BridgeError::NonFinite(_)
        )
    }
}
