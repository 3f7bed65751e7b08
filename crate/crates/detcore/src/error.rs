use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetError {
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f32 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("input must not be empty")]
    EmptyInput,
    #[error("probability mass is zero after truncation")]
    ZeroMass,
    #[error("invalid probability {value} at index {index}")]
    InvalidProbability { index: usize, value: f32 },
    #[error("unknown architecture profile `{0}`")]
    UnknownArch(String),
    #[error("invalid decode policy: {0}")]
    InvalidPolicy(String),
    #[error("token {token} is outside the vocabulary of size {vocab}")]
    TokenOutOfVocab { token: u32, vocab: usize },
    #[error("malformed canonical bytes: {0}")]
    Malformed(&'static str),
}

pub type Result<T> = std::result::Result<T, DetError>;
