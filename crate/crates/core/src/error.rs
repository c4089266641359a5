use std::path::PathBuf;

use thiserror::Error;

use crate::bench::arena::Phase;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },

    #[error("attention row {row} has every key masked")]
    FullyMaskedRow { row: usize },

    #[error("loss mask excludes every position")]
    EmptyLossMask,

    #[error("backward called on a graph with no path from the loss to any parameter")]
    DetachedGraph,

    #[error("vocabulary of size {size} is too small, need at least {min}")]
    VocabularyTooSmall { size: usize, min: usize },

    #[error("unknown token {token:?} on line {line}")]
    UnknownToken { token: String, line: usize },

    #[error("malformed line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),

    #[error("sequence of length {len} exceeds maximum {max}")]
    Overlength { len: usize, max: usize },

    #[error("position ordering violated: {0}")]
    PositionOrder(String),

    #[error("target sequence is empty")]
    EmptyTarget,

    #[error("chunk size {0} is not supported by this model")]
    UnsupportedChunk(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint config does not match model: {0}")]
    ConfigMismatch(String),

    #[error("parameter {0:?} missing from checkpoint")]
    MissingParameter(String),

    #[error("beam sizes must satisfy b_at >= b_nat >= 1 (got b_at={b_at}, b_nat={b_nat})")]
    BeamOrder { b_at: usize, b_nat: usize },

    #[error("arena overflow in {phase} phase: requested {requested} bytes, {remaining} remaining")]
    ArenaOverflow {
        phase: Phase,
        requested: usize,
        remaining: usize,
    },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
