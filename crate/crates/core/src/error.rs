use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::device::ProtocolViolation;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid value for {key}: {reason}")]
    Invalid { key: String, reason: String },
    #[error("unknown key {key} (line {line})")]
    UnknownKey { key: String, line: usize },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("missing required key {0}")]
    Missing(String),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl ConfigError {
    pub fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

/// Malformed input data (trace files, address ranges).
#[derive(Debug, Error)]
pub enum InputError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}:{line}: timestamp {at} precedes previous record at {prev}")]
    Unsorted {
        path: String,
        line: usize,
        at: u64,
        prev: u64,
    },
    #[error("address {address:#x} outside capacity {capacity:#x}")]
    AddressOutOfRange { address: u64, capacity: u64 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Input(#[from] InputError),
    #[error("{violation}\nrecent commands:\n{history}")]
    Protocol {
        violation: ProtocolViolation,
        history: String,
    },
    #[error("writing {path}: {source}")]
    Output {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Input(_) => 3,
            Error::Protocol { .. } => 4,
            Error::Output { .. } => 5,
        }
    }
}
