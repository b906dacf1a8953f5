//! Harness error type: configuration problems, I/O failures, and
//! propagated library errors.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(std::io::Error),
    Lib(mfopt::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Io(e) => write!(f, "io error: {e}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<mfopt::Error> for CliError {
    fn from(e: mfopt::Error) -> Self {
        CliError::Lib(e)
    }
}
