use thiserror::Error;

/// Errors produced by the index, its build operations and dataset ingestion.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("truncated record {record}")]
    TruncatedRecord { record: usize },

    #[error("invalid dimension {dim} in record {record}")]
    InvalidDimension { record: usize, dim: i64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("row {row} has zero norm")]
    ZeroNorm { row: usize },

    #[error("k = {k} exceeds the {available} available entries")]
    KTooLarge { k: usize, available: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index is empty")]
    EmptyIndex,

    #[error("point {id} appears more than once in the move set")]
    DuplicateMove { id: u32 },

    #[error("list {list} out of range (nlist = {nlist})")]
    ListOutOfRange { list: u32, nlist: usize },

    #[error("point {id} is not stored in list {list}")]
    MisplacedPoint { id: u32, list: u32 },

    #[error("bad index snapshot: {0}")]
    Snapshot(String),

    #[error("cost model: {0}")]
    CostModel(String),

    #[error("unknown kernel `{0}`")]
    UnknownKernel(String),
}

pub type Result<T> = std::result::Result<T, Error>;
