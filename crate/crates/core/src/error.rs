use std::io;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    /// A file does not follow the expected on-disk layout.
    #[error("format error: {0}")]
    Format(String),

    /// A payload is shorter or longer than its header announces.
    #[error("size error: {0}")]
    Size(String),

    /// Values violate a data invariant (non-finite, negative probability, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Invalid configuration, usually a bad key or an impossible combination.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's precondition (shapes, empty inputs, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// An argument lies outside the mathematical domain of a function.
    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! contract {
    ($($arg:tt)*) => {
        $crate::error::Error::Contract(format!($($arg)*))
    };
}
pub(crate) use contract;
