use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A matrix that must be positive definite is not.
    #[error("numerical error in {context}: matrix not positive definite (eigenvalue {eigenvalue:e})")]
    NotPositiveDefinite { context: &'static str, eigenvalue: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("refused: {0}")]
    Refused(String),

    #[error("no feasible starting point: {0}")]
    Infeasible(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
