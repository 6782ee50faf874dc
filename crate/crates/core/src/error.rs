use thiserror::Error;

/// Errors produced by the tensor-train completion toolkit.
#[derive(Debug, Error)]
pub enum TtError {
    #[error("index error: {0}")]
    Index(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("dense materialization of {entries} entries exceeds the cap of {cap}")]
    CapExceeded { entries: u128, cap: usize },

    #[error("infeasible TT ranks: {0}")]
    InfeasibleRanks(String),

    #[error("SVD failed: {0}")]
    Svd(String),

    #[error("ill-conditioned point at separation {separation}: sigma_min/sigma_max = {ratio:e}")]
    IllConditioned { separation: usize, ratio: f64 },

    #[error("zero tensor: {0}")]
    ZeroTensor(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("container format error: {0}")]
    Format(String),

    #[error("initialization failed at stage {stage}: {msg}")]
    InitFailure { stage: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TtError>;
