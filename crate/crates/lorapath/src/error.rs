//! Crate-wide error type.

use crate::costmodel::VariantId;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Operand shapes do not fit the requested operation. The reported shapes
    /// are the effective ones, i.e. after transpose flags were applied.
    #[error("shape mismatch in {op}: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    ShapeMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    /// An exact integer cost does not fit in 64 bits.
    #[error("cost arithmetic overflows 64 bits for shape {shape}")]
    Overflow { shape: String },

    #[error("{0} is cost-model-only and cannot be executed")]
    UnsupportedVariant(VariantId),

    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("measurement error: {0}")]
    Measurement(String),

    /// Requested matrix would not be addressable in memory.
    #[error("matrix of {rows}x{cols} elements is too large to allocate")]
    TooLarge { rows: usize, cols: usize },

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
