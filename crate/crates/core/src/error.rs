//! Error type shared across the crate.

use std::fmt;

use crate::tree::NodeId;

/// Errors produced by tree construction, function evaluation, and search.
#[derive(Debug)]
pub enum Error {
    /// A numeric argument is outside its mathematical domain.
    Domain(String),
    /// The caller combined otherwise-valid objects in an unsupported way.
    Usage(String),
    /// The requested object would exceed a hard size limit.
    Capacity(String),
    /// A tree (built or loaded) violates a structural invariant.
    InvalidTree { node: Option<NodeId>, reason: String },
    /// Underlying I/O failure.
    Io(std::io::Error),
    /// Malformed serialized input.
    Format(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Usage(msg) => write!(f, "usage error: {msg}"),
            Error::Capacity(msg) => write!(f, "capacity error: {msg}"),
            Error::InvalidTree { node: Some(n), reason } => {
                write!(f, "invalid tree at node {n}: {reason}")
            }
            Error::InvalidTree { node: None, reason } => write!(f, "invalid tree: {reason}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
