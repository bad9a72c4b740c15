use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the recognition pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or image extents do not agree with what an operation needs.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A NaN or infinity appeared in a computed value.
    #[error("numeric error in {op}: non-finite value")]
    Numeric { op: String },
    /// A configuration value violates its documented range.
    #[error("configuration error: {0}")]
    Config(String),
    /// Input data is malformed or insufficient.
    #[error("data error: {0}")]
    Data(String),
    /// An API was called in a way its contract forbids.
    #[error("usage error: {0}")]
    Usage(String),
    /// A binary file does not follow the expected layout.
    #[error("format error: {0}")]
    Format(String),
    /// A checkpoint was written by an incompatible format version.
    #[error("version mismatch: file has format version {found}, this build reads version {expected}")]
    Version { found: u32, expected: u32 },
    /// A structured text line could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn numeric(op: impl Into<String>) -> Self {
        Error::Numeric { op: op.into() }
    }

    /// Process exit status for this error: 2 for configuration and usage
    /// problems, 1 for everything caused by the data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
