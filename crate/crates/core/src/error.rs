use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HomlabError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("argument outside domain: {0}")]
    Domain(String),
    #[error("grid too coarse: step {step} exceeds the required {required}")]
    GridTooCoarse { step: f64, required: f64 },
    #[error("optimal path reaches |u| = {cap}; raise the amplitude cap")]
    CapExceeded { cap: f64 },
    #[error("lagrangian specification not coercive: {0}")]
    Spec(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for HomlabError {
    fn from(e: std::io::Error) -> Self {
        HomlabError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for HomlabError {
    fn from(e: serde_json::Error) -> Self {
        HomlabError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HomlabError>;

impl From<csv::Error> for HomlabError {
    fn from(e: csv::Error) -> Self {
        HomlabError::Io(e.to_string())
    }
}
