use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand extents are inconsistent with each other or with the operation.
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A layer, radar, or training configuration cannot produce a valid result.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller violated an API precondition (for example, a non-scalar loss).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A non-finite value showed up where a finite one was required.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed RSEG data in {path:?}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("dataset error: {0}")]
    Data(String),

    #[error("i/o error on {path:?}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format { path: path.into(), detail: detail.into() }
    }
}
