use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A catalog or dataset row could not be parsed.
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },

    /// A row parsed but holds out-of-range values.
    #[error("line {line}: {msg}")]
    Validation { line: u64, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    /// The experiment cannot be scored, e.g. a partition holds a single class.
    #[error("degenerate experiment: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}
