use alloc::string::String;
use core::fmt;

/// Errors produced by the numeric core.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CoreError {
    /// Tensor shapes do not line up (mismatched batch sizes, bad matmul dims, ...).
    Shape(String),
    /// A configuration violates its invariants (indivisible patch grid, zero heads, ...).
    Config(String),
    /// Non-finite values where finite ones are required.
    Numeric(String),
    /// An index or label is out of range.
    Index(String),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::Shape(msg) => write!(f, "shape error: {msg}"),
            CoreError::Config(msg) => write!(f, "config error: {msg}"),
            CoreError::Numeric(msg) => write!(f, "numeric error: {msg}"),
            CoreError::Index(msg) => write!(f, "index error: {msg}"),
        }
    }
}

impl core::error::Error for CoreError {}

pub type Result<T> = core::result::Result<T, CoreError>;
