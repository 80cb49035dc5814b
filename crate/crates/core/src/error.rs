use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("corpus contains no examples")]
    EmptyCorpus,

    #[error("non-finite value {value} at feature {feature}, column {column}")]
    NonFinite {
        feature: usize,
        column: usize,
        value: f64,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("linear system is numerically singular at ridge {ridge}; use a positive ridge")]
    Singular { ridge: f64 },

    #[error(
        "exact enumeration supports at most {max} features, got {dim}; use the Monte-Carlo oracle"
    )]
    Capacity { dim: usize, max: usize },

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },

    #[error("labels are degenerate: {0}")]
    DegenerateLabels(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("not enough examples: {0}")]
    SampleSize(String),

    #[error("cannot build folds: {0}")]
    Fold(String),

    #[error("unknown domain id {0:?}")]
    Lookup(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
