use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("class {0} has no ground truths")]
    UndefinedClass(u32),

    #[error("referential integrity: {0}")]
    ReferentialIntegrity(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("ground-truth type mismatch: {0}")]
    GroundTruthType(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("remote provider returned HTTP {status}: {message}")]
    Remote { status: u16, message: String },

    #[error("transport failure: {0}")]
    Transport(String),

    #[error("protocol error: {0}")]
    Protocol(String),
}

/// Coarse failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// I/O or transport problems (exit 1).
    Io,
    /// Bad input, configuration or usage (exit 2).
    Validation,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } | Error::Transport(_) | Error::Remote { .. } => ErrorClass::Io,
            Error::Image {
                source: image::ImageError::IoError(_),
                ..
            } => ErrorClass::Io,
            _ => ErrorClass::Validation,
        }
    }
}
