use thiserror::Error;

/// Errors raised by the planning, encoding and verification routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("degenerate slice: {width}x{height} px is smaller than one {patch} px patch")]
    DegenerateSlice { width: u32, height: u32, patch: u32 },

    #[error("sequence length {len} is not a square (q*q) position table")]
    NotSquare { len: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty slice: cross-attention needs at least one input token")]
    EmptySlice,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("ideal N={ideal} exceeds max_N={max}")]
    TooManySlices { ideal: u32, max: u32 },

    #[error("layout parse error at item {position}: {message}")]
    Layout { position: usize, message: String },

    #[error("binary format: {0}")]
    Format(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
