use alloc::string::String;

use crate::tensor::Shape;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid shape ({n}, {c}, {h}, {w}): {reason}")]
    InvalidShape {
        n: usize,
        c: usize,
        h: usize,
        w: usize,
        reason: &'static str,
    },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Shape, got: Shape },
    #[error("data length {got} does not match shape element count {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("tensor blob: {0}")]
    Blob(#[from] crate::tensor::BlobError),
    #[error("architecture is invalid: {0}")]
    InvalidSpec(String),
    #[error("search failed: {0}")]
    Search(String),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
