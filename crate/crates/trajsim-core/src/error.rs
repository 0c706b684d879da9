use thiserror::Error;

/// Errors shared across the toolkit.
///
/// The CLI maps these onto process exit codes, so the split between
/// `Config`, `Data` and `Numeric` is part of the external contract.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// Incompatible tensor or sequence shapes.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A computation produced NaN/Inf or was asked for an undefined value.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
