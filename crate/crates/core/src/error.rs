use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("non-finite value encountered in {0}")]
    NonFiniteValue(String),
    #[error("step size must be positive, got alpha_{index} = {value}")]
    NonPositiveStep { index: usize, value: f64 },
    #[error("declared schedule flags contradicted by spot-check: {0}")]
    ContradictoryFlags(String),
    #[error("invalid parameters: {0}")]
    InvalidSpec(String),
    #[error("support function needs a nonzero direction")]
    ZeroDirection,
    #[error("euler step too large: risk increased beyond its error budget {count} times in a row at t = {t}")]
    StepTooLarge { t: f64, count: usize },
    #[error("kink suspected near w (one-sided slopes differ by {gap})")]
    KinkSuspected { gap: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("unknown problem '{0}'")]
    UnknownProblem(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
