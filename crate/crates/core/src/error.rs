use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure class, used by the command-line driver to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Io,
    Numeric,
    EmptyAfterFilter,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("token id {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },

    #[error("sequence of length {len} exceeds max_positions {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("empty prompt")]
    EmptyPrompt,

    #[error("graph needs at least one layer")]
    NoLayers,

    #[error("invalid edge {source_name} -> {destination}")]
    InvalidEdge { source_name: String, destination: String },

    #[error("T_cut {t_cut} outside 1..={available}")]
    TruncationOutOfRange { t_cut: usize, available: usize },

    #[error("tape is missing {0}")]
    MissingTape(&'static str),

    #[error("metric {metric}: {detail}")]
    Metric { metric: &'static str, detail: String },

    #[error("sample {id}: {source}")]
    Sample {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("no samples left after filtering")]
    EmptyAfterFilter,

    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("truncated container: {0}")]
    Truncated(String),

    #[error("inconsistent container: {0}")]
    Inconsistent(String),

    #[error("unknown dtype {0:?}")]
    UnknownDtype(String),

    #[error("missing tensor {0:?}")]
    MissingTensor(String),

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NonFinite { .. } | Error::Metric { .. } => ErrorClass::Numeric,
            Error::EmptyAfterFilter => ErrorClass::EmptyAfterFilter,
            Error::BadMagic(_)
            | Error::Truncated(_)
            | Error::Inconsistent(_)
            | Error::UnknownDtype(_)
            | Error::MissingTensor(_)
            | Error::Io { .. }
            | Error::Json(_)
            | Error::Csv(_) => ErrorClass::Io,
            Error::Sample { source, .. } => source.class(),
            _ => ErrorClass::Config,
        }
    }
}
