use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("record `{record}`: {msg}")]
    Record { record: String, msg: String },

    #[error("line {line}, record `{record}`: unknown {role} label `{label}`")]
    UnknownLabel {
        role: &'static str,
        label: String,
        record: String,
        line: usize,
    },

    #[error("invalid box [{x1}, {y1}, {x2}, {y2}]")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("bad grid file {path}: {msg}")]
    GridFormat { path: PathBuf, msg: String },

    #[error("no verb distribution for object categories: {}", .0.join(", "))]
    MissingCategories(Vec<String>),

    #[error("non-finite gradient in parameter block `{0}`")]
    NonFiniteGradient(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn record(record: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Record {
            record: record.into(),
            msg: msg.into(),
        }
    }
}
