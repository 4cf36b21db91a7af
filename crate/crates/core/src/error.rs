use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate example id {id:?} in split {split}")]
    DuplicateExample { split: String, id: String },

    #[error("duplicate tag id {0:?}")]
    DuplicateTag(String),

    #[error("example {id:?} in split {split} has no tags")]
    EmptyTags { split: String, id: String },

    #[error("unknown split name {0:?} (expected train, validation or test)")]
    UnknownSplit(String),

    #[error("train split is empty")]
    EmptyTrainSplit,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("vocabulary mismatch: input packed with a different vocabulary")]
    VocabMismatch,

    #[error("batch needs at least 2 distinct contexts, got {0}")]
    BatchTooSmall(usize),

    #[error("every loss entry is masked")]
    AllMasked,

    #[error("example {0:?} must carry exactly one question")]
    NotSingleQuestion(String),

    #[error("synthetic config: {0}")]
    SynthConfig(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("stale artifact: {0}")]
    Stale(String),

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
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
