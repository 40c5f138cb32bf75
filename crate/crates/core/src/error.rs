use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate task pattern: waypoints {0} and {1} coincide")]
    DegeneratePattern(usize, usize),

    #[error("invalid capture: {0}")]
    InvalidCapture(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("training data contains a single class")]
    SingleClass,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("artifact store: {0}")]
    Store(String),

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),

    #[error("job {job}: {source}")]
    Job {
        job: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub(crate) fn in_job(self, job: impl Into<String>) -> Self {
        Self::Job { job: job.into(), source: Box::new(self) }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
