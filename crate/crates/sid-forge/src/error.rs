use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// All fallible paths in the crate surface through this type; the CLI maps
/// `Io`/`Json`/`Format` to exit code 2 and everything else to exit code 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate item id {0}")]
    DuplicateItem(u32),

    #[error("code {code} out of range for codebook size {v}")]
    CodeOutOfRange { code: u32, v: u32 },

    #[error("sid has {got} codes, expected {expected}")]
    BadSidLength { got: usize, expected: usize },

    #[error("item id {id} out of range for {n} items")]
    UnknownItem { id: u32, n: usize },

    #[error("index has no items")]
    EmptyIndex,

    #[error("sid length {0} is too short for prefix grouping")]
    SidTooShort(usize),

    #[error("no records to evaluate")]
    EmptyEvaluation,

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("prefix group of {size} items exceeds codebook capacity {v}")]
    GroupExceedsCapacity { size: usize, v: usize },

    #[error("model does not match index: {0}")]
    ModelMismatch(String),

    #[error("bad input: {0}")]
    BadInput(String),

    #[error("no co-occurrence pairs left after holdout")]
    EmptyCorpus,

    #[error("rank {k} exceeds matrix size {n}")]
    RankTooHigh { k: usize, n: usize },

    #[error("row count mismatch: {left} vs {right}")]
    RowMismatch { left: usize, right: usize },

    #[error("all interactions removed by {k}-core filtering")]
    AllFiltered { k: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
