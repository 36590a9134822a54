//! Solution backends and the resource limits they run under.

use serde::{Deserialize, Serialize};

use crate::interchange::{EmitError, SolutionParseError};
use crate::model::EvalError;

mod enumerate;
mod external;
mod process;
pub mod sandbox;

pub use enumerate::{enumerate, solve_enumeration, EnumerationStats};
pub use external::{solve_external, BackendCommand};
pub use process::{run_with_limits, Invocation, ProcessError, ProcessOutcome, TAIL_BYTES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResourceLimits {
    pub wall_clock_seconds: f64,
    pub max_enumeration_nodes: u64,
}

impl Default for ResourceLimits {
    fn default() -> Self {
        Self { wall_clock_seconds: 600.0, max_enumeration_nodes: 100_000_000 }
    }
}

impl ResourceLimits {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.wall_clock_seconds > 0.0) || self.max_enumeration_nodes == 0 {
            return Err(SolverError::InvalidLimits(*self));
        }
        Ok(())
    }

    pub fn wall_clock(&self) -> std::time::Duration {
        std::time::Duration::from_secs_f64(self.wall_clock_seconds)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error("resource limits must be positive: {0:?}")]
    InvalidLimits(ResourceLimits),
    #[error("unsupported structure: {0}")]
    UnsupportedStructure(String),
    #[error(transparent)]
    NonlinearModel(#[from] EmitError),
    #[error("cannot launch backend `{command}`: {reason}")]
    BackendLaunchFailure { command: String, reason: String },
    #[error("backend solution file: {0}")]
    SolutionParse(#[from] SolutionParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl SolverError {
    pub fn label(&self) -> &'static str {
        match self {
            Self::InvalidLimits(_) => "InvalidLimits",
            Self::UnsupportedStructure(_) => "UnsupportedStructure",
            Self::NonlinearModel(_) => "NonlinearModel",
            Self::BackendLaunchFailure { .. } => "BackendLaunchFailure",
            Self::SolutionParse(_) => "SolutionParseError",
            Self::Eval(_) => "EvalError",
            Self::Io(_) => "IoError",
        }
    }
}
