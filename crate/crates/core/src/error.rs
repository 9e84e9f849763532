use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid schema specification: {0}")]
    InvalidSchemaSpec(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("unknown table {0}")]
    UnknownTable(usize),
    #[error("unknown column {column} in table {table}")]
    UnknownColumn { table: usize, column: usize },
    #[error("invalid query {id}: {reason}")]
    InvalidQuery { id: u32, reason: String },
    #[error("invalid index: {0}")]
    InvalidIndex(String),
    #[error("query {id} touches {slots} predicates but only {capacity} slots are available")]
    TooManySlots {
        id: u32,
        slots: usize,
        capacity: usize,
    },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("base cost must be positive, got {0}")]
    NonPositiveBaseCost(f64),
    #[error("filter is not calibrated")]
    Uncalibrated,
    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),
}

pub type Result<T> = core::result::Result<T, Error>;
