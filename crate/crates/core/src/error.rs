use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// The state left the finite range during integration.
    #[error("divergence at step {step} (neuron {neuron}, value {value})")]
    Divergence {
        step: usize,
        neuron: usize,
        value: f64,
    },

    /// Raised by training loops so the failing sample can be reported.
    #[error("sample {sample}: {source}")]
    AtSample {
        sample: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("relaxation stopped at residual {residual:.3e} (tolerance {tolerance:.1e})")]
    NotConverged { residual: f64, tolerance: f64 },

    #[error("ill-conditioned Hessian (condition number {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_sample(self, sample: usize) -> Self {
        match self {
            e @ Error::AtSample { .. } => e,
            e => Error::AtSample {
                sample,
                source: Box::new(e),
            },
        }
    }

    /// True when the root cause is numerical divergence.
    pub fn is_divergence(&self) -> bool {
        match self {
            Error::Divergence { .. } => true,
            Error::AtSample { source, .. } => source.is_divergence(),
            _ => false,
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
