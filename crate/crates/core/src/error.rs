use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: parse error at line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid `{field}`: {msg}")]
    Invalid { field: String, msg: String },

    #[error("{what} out of range: {value} (allowed {allowed})")]
    OutOfRange {
        what: String,
        value: i64,
        allowed: String,
    },

    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("{0}")]
    Mapping(String),

    #[error("{0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn out_of_range(what: impl Into<String>, value: i64, allowed: impl Into<String>) -> Self {
        Error::OutOfRange {
            what: what.into(),
            value,
            allowed: allowed.into(),
        }
    }

    pub(crate) fn length(what: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::LengthMismatch {
            what: what.into(),
            expected,
            got,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
