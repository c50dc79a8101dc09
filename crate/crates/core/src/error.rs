use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition.
    #[error("contract violation in {op}: {msg}")]
    Contract { op: &'static str, msg: String },

    #[error("shape mismatch in {op}: {shapes}")]
    Shape { op: &'static str, shapes: String },

    #[error("training diverged at step {step}: {msg}")]
    Divergence { step: usize, msg: String },

    #[error("numerical failure in {stage}: {msg}")]
    Numeric { stage: String, msg: String },

    #[error("invalid cyclization spec: {0}")]
    Spec(String),

    #[error("assembly failed: {0}")]
    Assembly(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("invariant violated at step {step}: {msg}\n{dump}")]
    Invariant {
        step: usize,
        msg: String,
        dump: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Contract {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, shapes: impl Into<String>) -> Self {
        Error::Shape {
            op,
            shapes: shapes.into(),
        }
    }
}
