//! Solver output shared by every backend.

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::model::Assignment;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveStatus {
    Optimal,
    Feasible,
    Infeasible,
    Unbounded,
    Timeout,
    Error,
}

impl SolveStatus {
    pub fn has_point(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::Feasible)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Feasible => "feasible",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::Timeout => "timeout",
            SolveStatus::Error => "error",
        }
    }

    pub fn parse(word: &str) -> Option<Self> {
        Some(match word.trim().to_ascii_lowercase().as_str() {
            "optimal" => SolveStatus::Optimal,
            "feasible" => SolveStatus::Feasible,
            "infeasible" => SolveStatus::Infeasible,
            "unbounded" => SolveStatus::Unbounded,
            "timeout" => SolveStatus::Timeout,
            "error" => SolveStatus::Error,
            _ => return None,
        })
    }
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub wall_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_tokens: Option<u64>,
}

/// A solver's answer. Points are present exactly when the status is
/// optimal or feasible; the constructors keep that invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionCandidate {
    pub status: SolveStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignment: Option<Assignment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective_value: Option<f64>,
    #[serde(default)]
    pub parameter_snapshot: IndexMap<String, Tensor>,
    #[serde(default)]
    pub usage: Usage,
    pub provenance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl SolutionCandidate {
    pub fn with_point(status: SolveStatus, assignment: Assignment, objective: f64, provenance: &str) -> Self {
        debug_assert!(status.has_point());
        Self {
            status,
            assignment: Some(assignment),
            objective_value: Some(objective),
            parameter_snapshot: IndexMap::new(),
            usage: Usage::default(),
            provenance: provenance.to_string(),
            message: None,
        }
    }

    pub fn without_point(status: SolveStatus, provenance: &str, message: impl Into<Option<String>>) -> Self {
        Self {
            status,
            assignment: None,
            objective_value: None,
            parameter_snapshot: IndexMap::new(),
            usage: Usage::default(),
            provenance: provenance.to_string(),
            message: message.into(),
        }
    }

    /// Drops the point and marks the candidate as an error.
    pub fn downgrade(mut self, message: impl Into<String>) -> Self {
        self.status = SolveStatus::Error;
        self.assignment = None;
        self.objective_value = None;
        self.message = Some(message.into());
        self
    }

    pub fn with_snapshot(mut self, snapshot: IndexMap<String, Tensor>) -> Self {
        self.parameter_snapshot = snapshot;
        self
    }

    pub fn with_wall_seconds(mut self, seconds: f64) -> Self {
        self.usage.wall_seconds = seconds;
        self
    }
}
