use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid partition sequence: {0}")]
    InvalidSequence(String),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("grounds overlap on {0}")]
    OverlappingGrounds(usize),
    #[error("coupling integrity: {0}")]
    CouplingIntegrity(String),
    #[error("invalid forest: {0}")]
    InvalidForest(String),
    #[error("expected a single tree, got {0} components")]
    NotATree(usize),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("truncation admits infinitely many forests: {0}")]
    UnboundedTruncation(String),
    #[error("not an edge of the dual forest: {0}")]
    NotDualEdge(String),
    #[error("invalid time: {0}")]
    InvalidTime(String),
    #[error("tensor order {order} exceeds configured maximum {max}")]
    OrderTooLarge { order: usize, max: usize },
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid word: {0}")]
    InvalidWord(String),
    #[error("sample assignment mismatch: {0}")]
    SampleMismatch(String),
    #[error("parameter out of range: {0}")]
    Domain(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
