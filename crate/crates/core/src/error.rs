use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-manifold edges: {edges:?}")]
    NonManifold { edges: Vec<(usize, usize)> },

    #[error("malformed {what} file: {msg}")]
    Format { what: &'static str, msg: String },

    #[error("no zero crossing in signed distance grid")]
    NoZeroCrossing,
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
