use thiserror::Error;

use crate::ids::{ControllerId, FailureId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("simulation fault: {0}")]
    SimulationFault(String),

    #[error("controller {controller} has no feasible input sequence")]
    Infeasible { controller: ControllerId },

    #[error("training error: {0}")]
    Training(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("no safe controller for plausible failures {0:?}")]
    FailSafe(Vec<FailureId>),

    #[error("artifact schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("corrupt artifact {path}: {reason}")]
    Corrupt { path: String, reason: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
