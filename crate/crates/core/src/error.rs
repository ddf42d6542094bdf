use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("truncated input: header declares {expected} bytes, stream holds {actual}")]
    Truncation { expected: usize, actual: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("no client updates were accepted for aggregation")]
    NoUpdates,

    #[error("round {round}, client {client}: {source}")]
    Client {
        round: usize,
        client: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps `self` with the round/client where it surfaced.
    pub fn in_client(self, round: usize, client: usize) -> Self {
        Error::Client {
            round,
            client,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad user input rather than a failing run.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) | Error::Format(_) | Error::Truncation { .. } => true,
            Error::Io { .. } => true,
            Error::Client { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
