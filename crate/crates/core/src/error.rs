use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(alloc::vec::Vec<usize>),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("missing context: {0}")]
    MissingContext(&'static str),
    #[error("incompatible model: {0}")]
    Incompatible(String),
}

pub type Result<T> = core::result::Result<T, Error>;
