use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("sample {id}: {tags} tags for {tokens} tokens")]
    LengthMismatch {
        id: String,
        tokens: usize,
        tags: usize,
    },

    #[error("sample {id}: mapping refers to {kind} span #{ordinal} but only {count} exist")]
    DanglingOrdinal {
        id: String,
        kind: &'static str,
        ordinal: usize,
        count: usize,
    },

    #[error("invalid sample {id}: {message}")]
    InvalidSample { id: String, message: String },

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("vector file line {line}: {message}")]
    VectorFormat { line: usize, message: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("training data contains a single class")]
    SingleClass,

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("unparseable y value {surface:?} at index {index}")]
    Unparseable { index: usize, surface: String },

    #[error("cannot render: {0}")]
    Render(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
