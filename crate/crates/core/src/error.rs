use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Variants are grouped so that a driver can map them onto process exit
/// codes: configuration, data format, and numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Split(_) | Error::Label(_) => ErrorClass::Config,
            Error::Format { .. } | Error::Consistency(_) | Error::Io { .. } => ErrorClass::Data,
            Error::Dimension(_)
            | Error::Shape(_)
            | Error::DegenerateBatch(_)
            | Error::NonFinite(_)
            | Error::Numerical(_)
            | Error::Generation(_) => ErrorClass::Numerical,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
