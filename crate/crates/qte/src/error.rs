use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rank {k} out of range 0..={n}")]
    KOutOfRange { k: usize, n: usize },

    #[error("enumeration budget exceeded: {required} > {budget}")]
    BudgetExceeded { required: u128, budget: u128 },

    #[error("wrong design: {0}")]
    WrongDesign(String),

    #[error("dataset failed validation:\n{0}")]
    InvalidDataset(String),

    #[error("csv error at line {line}: {message}")]
    Csv { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
