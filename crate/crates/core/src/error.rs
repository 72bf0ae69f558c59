use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PmktError {
    #[error("invalid instance: {0}")]
    Validation(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("structural mismatch: {0}")]
    Structural(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("{0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, PmktError>;
