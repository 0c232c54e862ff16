use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = IrpError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum IrpError {
    #[error("{field} = {value} outside [{lo}, {hi}]")]
    Range {
        field: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("simulation diverged at t = {time:.3} s")]
    Diverged { time: f64 },

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Stream(#[from] std::io::Error),

    #[error("malformed input: {0}")]
    Format(String),
}

impl IrpError {
    pub fn contract(msg: impl Into<String>) -> Self {
        IrpError::Contract(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        IrpError::Format(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IrpError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short category label, used by the CLI for error reporting.
    pub fn category(&self) -> &'static str {
        match self {
            IrpError::Range { .. } => "range",
            IrpError::Contract(_) => "contract",
            IrpError::Diverged { .. } => "diverged",
            IrpError::TrainingDiverged { .. } => "training",
            IrpError::Io { .. } | IrpError::Stream(_) => "io",
            IrpError::Format(_) => "format",
        }
    }
}
