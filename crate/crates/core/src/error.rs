use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes that cannot line up (vector lengths, matrix dims).
    #[error("structural error: {0}")]
    Structural(String),

    /// A value violates a documented constraint. `path` points at the field.
    #[error("validation error at {path}: {message}")]
    Validation { path: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("format version mismatch: file has {found}, expected {expected}")]
    Version { found: u32, expected: u32 },

    #[error("no external vector for record {0:?}")]
    Lookup(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the filesystem rather than by content.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
