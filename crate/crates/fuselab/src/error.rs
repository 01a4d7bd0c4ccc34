use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by how the CLI reports them: domain/data errors map
/// to exit code 3, numerical failures to exit code 4.
#[derive(Debug, Error)]
pub enum Error {
    /// A value violated a domain precondition (non-positive field, bad level
    /// index, mismatched schema, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data could not be read or parsed.
    #[error("data error: {0}")]
    Data(String),

    /// A numerical routine failed (factorization, degenerate variance, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
