use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not conform.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// The engine was driven incorrectly (non-scalar loss, second backward, ...).
    #[error("usage error: {0}")]
    Usage(String),
    /// A gradient contained NaN or infinity; the optimizer step was not applied.
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
}

pub type Result<T> = std::result::Result<T, Error>;
