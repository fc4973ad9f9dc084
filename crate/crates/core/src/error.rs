use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("unknown token id {0}")]
    UnknownTokenId(u32),

    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty response")]
    EmptyResponse,

    #[error("degenerate bounds: max ({max}) must exceed min ({min})")]
    DegenerateBounds { min: f64, max: f64 },

    #[error("degenerate dev set: needs at least one positive and one negative example")]
    DegenerateDevSet,

    #[error("unknown label literal {0:?}")]
    UnknownLabel(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("missing generations for ids: {0:?}")]
    MissingGenerations(Vec<String>),

    #[error("no examples to evaluate")]
    NoExamples,

    #[error("connection error: {0}")]
    Connection(String),

    #[error("timeout: {0}")]
    Timeout(String),

    #[error("server returned status {status}: {message}")]
    Server { status: u16, message: String },

    #[error("length mismatch: expected {expected} logprobs, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("{path}: {source}")]
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
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
