//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

use crate::contrast::Polarity;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification of an [`Error`], used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Calibration,
    Other,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty token sequence")]
    EmptySequence,

    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("prompt of {len} tokens exceeds max_seq_len {max}; reduce the number of retrieved posts (k_max)")]
    PromptOverflow { len: usize, max: usize },

    #[error("token id {token} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },

    #[error("answer position {position} out of range for sequence of length {len}")]
    AnswerPositionOutOfRange { position: usize, len: usize },

    #[error("prompt has no answer position set")]
    MissingAnswerPosition,

    #[error("layer {layer} out of range [1, {num_layers}]")]
    LayerOutOfRange { layer: usize, num_layers: usize },

    #[error("duplicate option token id {0}")]
    DuplicateOption(u32),

    #[error("option list is empty")]
    EmptyOptions,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("representation set has no {0} rows")]
    EmptyClass(Polarity),

    #[error("hyperplane fit needs at least 2 rows, got {0}")]
    TooFewRows(usize),

    #[error("steering vector for item {item_id} is degenerate (norm {norm:e})")]
    DegenerateSteering { item_id: u8, norm: f64 },

    #[error("empty validation set")]
    EmptyValidation,

    #[error("unknown BDI-II item id {0}")]
    UnknownItem(u8),

    #[error("zero-norm vector has no direction")]
    ZeroVector,

    #[error("total {0} outside [0, 63]")]
    TotalOutOfRange(u32),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("user ids do not align: {0:?}")]
    UserMismatch(Vec<String>),

    #[error("relative change undefined for a zero baseline")]
    ZeroBaseline,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("embedding provider failed on post {index}: {message}")]
    Embedding { index: usize, message: String },

    #[error("item {item_id}: {source}")]
    Item {
        item_id: u8,
        #[source]
        source: Box<Error>,
    },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("missing steering artifacts: {0}")]
    MissingArtifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn with_item(self, item_id: u8) -> Self {
        Error::Item {
            item_id,
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidConfig(_) | Error::UnknownItem(_) => ErrorKind::Config,
            Error::Parse { .. }
            | Error::Data(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::UserMismatch(_)
            | Error::MissingArtifact(_)
            | Error::Embedding { .. } => ErrorKind::Data,
            Error::EmptyClass(_)
            | Error::DegenerateSteering { .. }
            | Error::EmptyValidation
            | Error::TooFewRows(_)
            | Error::Calibration(_) => ErrorKind::Calibration,
            Error::Item { source, .. } => source.kind(),
            _ => ErrorKind::Other,
        }
    }
}
