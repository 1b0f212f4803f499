use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failures while reading a serialized weight file.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum WeightFileError {
    #[error("bad magic: expected \"USLN\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("format version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("truncated file while reading {0}")]
    Truncated(&'static str),
    #[error("parameter-count mismatch: expected {expected}, found {found}")]
    ParamCountMismatch { expected: usize, found: usize },
    #[error("tensor {name:?}: {msg}")]
    Tensor { name: String, msg: String },
}

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or ranks that an operation cannot accept.
    #[error("shape error: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite gradient for parameter {param}")]
    NonFinite { param: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: cannot decode image: {msg}")]
    Decode { path: PathBuf, msg: String },

    #[error("{path}: cannot encode image: {msg}")]
    Encode { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    WeightFile {
        path: PathBuf,
        #[source]
        source: WeightFileError,
    },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("data error: {0}")]
    Data(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
