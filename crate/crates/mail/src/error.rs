//! Error type shared across the library.
//!
//! Every failure carries a [`ErrorKind`] so callers (notably the CLI) can map
//! errors onto exit codes without string matching.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Tensor shape / axis mismatch.
    Dimension,
    /// Invalid configuration (bad hyperparameter, unknown key, ...).
    Config,
    /// API contract violation (non-scalar loss, consumed tape, ...).
    Contract,
    /// Operation issued against a layer in the wrong state.
    State,
    /// Invalid data (label out of range, ...).
    Data,
    /// Non-finite value where a finite one is required.
    Numeric,
    /// Malformed on-disk artifact.
    Format,
    /// Underlying I/O failure.
    Io,
}

#[derive(Debug, Clone)]
pub struct Error {
    pub kind: ErrorKind,
    pub message: String,
}

impl Error {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    pub fn dimension(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Dimension, message)
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Config, message)
    }

    pub fn contract(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Contract, message)
    }

    pub fn state(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::State, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Data, message)
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Numeric, message)
    }

    pub fn format(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Format, message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Io, message)
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.kind {
            ErrorKind::Dimension => "dimension",
            ErrorKind::Config => "config",
            ErrorKind::Contract => "contract",
            ErrorKind::State => "state",
            ErrorKind::Data => "data",
            ErrorKind::Numeric => "numeric",
            ErrorKind::Format => "format",
            ErrorKind::Io => "io",
        };
        write!(f, "{} error: {}", tag, self.message)
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
