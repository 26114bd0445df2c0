use std::path::PathBuf;

use thiserror::Error;

use crate::averaging::WeightVector;
use crate::lsm::LsmParams;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("incomplete input: {0}")]
    IncompleteInput(String),

    /// The objective left the finite range; `last` is the last finite iterate.
    #[error("numerical failure: {message}")]
    NumericalFailure {
        message: String,
        last: Option<Box<LsmParams>>,
    },

    #[error("weight solver did not converge (kkt residual {kkt_residual:.3e})")]
    SolverFailure {
        best: WeightVector,
        kkt_residual: f64,
    },

    #[error("candidate fit failed for layer {layer}, dim {dim}, fold {}: {source}", fold_label(*.fold))]
    CandidateFit {
        layer: usize,
        dim: usize,
        fold: Option<usize>,
        completed: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("dispatch to worker for layer {layer} failed: {message}")]
    Dispatch {
        layer: usize,
        message: String,
        retriable: bool,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

fn fold_label(fold: Option<usize>) -> String {
    match fold {
        Some(k) => (k + 1).to_string(),
        None => "full".to_string(),
    }
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NumericalFailure { .. } | Error::SolverFailure { .. } => true,
            Error::CandidateFit { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
