use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("leading dimension {ld} is smaller than the spanned extent {extent}")]
    LeadingDimension { ld: usize, extent: usize },

    #[error("buffer holds {len} elements but the view needs {required}")]
    BufferTooSmall { len: usize, required: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("size violation: {0}")]
    SizeViolation(String),

    #[error("invalid blocking parameters: {0}")]
    InvalidParams(String),

    #[error("no microkernel instantiated for a {mr}x{nr} microtile")]
    UnsupportedMicrotile { mr: usize, nr: usize },

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("operand state does not match variant: {0}")]
    VariantMismatch(String),

    #[error("thread count must be at least 1")]
    ThreadCount,

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;
