use std::io;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown emotion label {0:?}")]
    UnknownLabel(String),
    #[error("bad magic bytes {found:?}, expected \"EMF1\"")]
    BadMagic { found: [u8; 4] },
    #[error("truncated record {index}: {reason}")]
    TruncatedRecord { index: usize, reason: String },
    #[error("non-finite value in record {index}")]
    NonFiniteValue { index: usize },
    #[error("invalid feature sequence: {0}")]
    InvalidSequence(String),
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("vote multiset is empty")]
    EmptyVotes,
    #[error("X is not admissible as a vote (sample {0})")]
    XVote(String),
    #[error("duplicate entry {0}")]
    Duplicate(String),
    #[error("no consensus entry for sample {0}")]
    MissingConsensus(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("shape mismatch: params {params}, grads {grads}, state {state}")]
    ShapeMismatch { params: usize, grads: usize, state: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample {0} carries label X or no label")]
    LabelX(String),
    #[error("sample {0} is not present in every input")]
    SampleMismatch(String),
    #[error("invalid posterior for sample {0}")]
    InvalidPosterior(String),
    #[error("training labels contain fewer than two classes")]
    DegenerateLabels,
    #[error("length mismatch: {0} references vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
}

pub type Result<T> = std::result::Result<T, Error>;
