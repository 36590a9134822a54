//! Adapter for external solver processes speaking the interchange format.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::expand::expand;
use crate::feasibility::{check_solution, TolerancePolicy};
use crate::interchange::{emit_interchange, parse_solution_file, SolutionParseError};
use crate::model::{eval_expression, ModelIR};
use crate::solution::{SolutionCandidate, SolveStatus};

use super::process::{run_with_limits, Invocation, ProcessError};
use super::{ResourceLimits, SolverError};

/// Argument vector with `{model}` and `{solution}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BackendCommand(pub Vec<String>);

impl BackendCommand {
    /// Splits on whitespace; no quoting.
    pub fn parse(template: &str) -> Self {
        Self(template.split_whitespace().map(str::to_string).collect())
    }

    fn invocation(&self, model: &str, solution: &str) -> Option<Invocation> {
        let mut argv = self.0.iter().map(|a| a.replace("{model}", model).replace("{solution}", solution));
        let program = argv.next()?;
        Some(Invocation::new(program, argv))
    }
}

impl fmt::Display for BackendCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

/// Emits the model, runs the backend and re-verifies whatever point it
/// returns. A point failing the check is reported with status error.
pub fn solve_external(
    m: &ModelIR,
    command: &BackendCommand,
    limits: &ResourceLimits,
) -> Result<SolutionCandidate, SolverError> {
    limits.validate()?;
    let provenance = format!("external:{}", command.0.first().map_or("", String::as_str));
    let document = emit_interchange(m)?;
    let dir = tempfile::tempdir()?;
    let model_path = dir.path().join("model.ewm");
    let solution_path = dir.path().join("solution.txt");
    std::fs::write(&model_path, document)?;
    let inv = command
        .invocation(&model_path.to_string_lossy(), &solution_path.to_string_lossy())
        .ok_or_else(|| SolverError::BackendLaunchFailure { command: command.to_string(), reason: "empty command".into() })?;

    let started = Instant::now();
    let outcome = match run_with_limits(&inv, limits) {
        Ok(o) => o,
        Err(ProcessError::Spawn { source, .. }) => {
            return Err(SolverError::BackendLaunchFailure { command: command.to_string(), reason: source.to_string() })
        }
        Err(e) => return Err(SolverError::BackendLaunchFailure { command: command.to_string(), reason: e.to_string() }),
    };
    let wall = started.elapsed().as_secs_f64();
    if outcome.timed_out {
        return Ok(SolutionCandidate::without_point(SolveStatus::Timeout, &provenance, Some("backend exceeded the wall-clock limit".to_string()))
            .with_wall_seconds(wall));
    }
    let text = match std::fs::read_to_string(&solution_path) {
        Ok(t) => t,
        Err(_) if outcome.exit_code != Some(0) => {
            let tail = outcome.stderr.lines().last().unwrap_or("").to_string();
            let msg = format!("backend exited with {:?}: {tail}", outcome.exit_code);
            return Ok(SolutionCandidate::without_point(SolveStatus::Error, &provenance, Some(msg)).with_wall_seconds(wall));
        }
        Err(_) => return Err(SolutionParseError { line: 0, message: "backend wrote no solution file".into() }.into()),
    };
    let file = parse_solution_file(&text)?;
    if !file.status.has_point() {
        return Ok(SolutionCandidate::without_point(file.status, &provenance, None).with_wall_seconds(wall));
    }

    let ex = expand(m)?;
    let mut x = Vec::with_capacity(ex.columns.len());
    let mut missing = Vec::new();
    for c in &ex.columns {
        match file.values.get(&c.name) {
            Some(v) => x.push(*v),
            None => {
                missing.push(c.name.clone());
                x.push(f64::NAN);
            }
        }
    }
    if !missing.is_empty() {
        let msg = format!("failed re-verification: no value for {}", missing.join(", "));
        return Ok(SolutionCandidate::without_point(SolveStatus::Error, &provenance, Some(msg)).with_wall_seconds(wall));
    }
    let assignment = ex.assignment(m, &x);
    let objective = match &m.objective {
        Some(o) => eval_expression(&o.expr, &assignment, m)?,
        None => file.objective.unwrap_or(0.0),
    };
    let cand = SolutionCandidate::with_point(file.status, assignment, objective, &provenance)
        .with_snapshot(m.parameter_snapshot())
        .with_wall_seconds(wall);
    let report = check_solution(m, &cand, &TolerancePolicy::default())
        .map_err(|e| SolverError::UnsupportedStructure(e.to_string()))?;
    if report.feasible {
        return Ok(cand);
    }
    let mut failed: Vec<String> = report.violated().map(|c| c.row_id.clone()).collect();
    failed.extend(report.bound_violations.iter().map(|b| format!("bounds of {}", b.column)));
    failed.extend(report.integrality_violations.iter().map(|b| format!("integrality of {}", b.column)));
    Ok(cand.downgrade(format!("failed re-verification: {}", failed.join(", "))))
}
