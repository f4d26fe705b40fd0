use std::io;

use thiserror::Error;

/// Errors raised across the toolkit.
///
/// The variants map onto the CLI exit-code contract: `Format` and `Io` are
/// data errors, `Numeric` is a numeric failure, everything else is a usage
/// or argument problem.
#[derive(Debug, Error)]
pub enum VqError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid quantization config: {0}")]
    Config(String),
    #[error("mode error: {0}")]
    Mode(String),
    #[error("encoding error: {0}")]
    Encoding(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("state error: {0}")]
    State(String),
    #[error("plan error: {0}")]
    Plan(String),
    #[error("schedule error: {0}")]
    Schedule(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, VqError>;
