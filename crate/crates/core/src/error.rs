use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("pulse error: {0}")]
    Pulse(String),

    #[error("phantom error: {0}")]
    Phantom(String),

    #[error("coefficient index {index} is outside the acquired band [{lo}, {hi}]")]
    OutOfBand { index: i64, lo: i64, hi: i64 },

    #[error("lookup table does not match the geometry (expected {expected}, found {found})")]
    LutMismatch { expected: String, found: String },

    #[error("ill-conditioned measurement row at k = {k}: |h[k]| = {magnitude:e}")]
    IllConditioned { k: usize, magnitude: f64 },

    #[error("solver did not converge after {iterations} iterations (residual {residual:e}, epsilon {epsilon:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        epsilon: f64,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed {kind} file: {reason}")]
    Format { kind: &'static str, reason: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Wraps the error with the pipeline stage that raised it.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::NonConvergence { .. } => 4,
            Error::Io(_) | Error::Format { .. } | Error::LutMismatch { .. } => 5,
            _ => 3,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
