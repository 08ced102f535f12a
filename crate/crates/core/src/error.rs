use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("numeric error: non-finite value in {context}")]
    NonFinite { context: String },

    #[error("index error in {op}: {detail}")]
    Index { op: &'static str, detail: String },

    #[error("state error: {0}")]
    State(String),

    #[error("format error: {field}: {detail}")]
    Format { field: &'static str, detail: String },

    #[error("length error: {0}")]
    Length(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("allocation error: {0}")]
    Allocation(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("training diverged in stage {stage} (epoch {epoch}, step {step})")]
    Diverged {
        stage: String,
        epoch: usize,
        step: usize,
        /// Directory holding the last finite checkpoint, when one was written.
        last_good: Option<PathBuf>,
    },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
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

    pub(crate) fn format(field: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            field,
            detail: detail.into(),
        }
    }
}
