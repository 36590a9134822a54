//! Client side of the script runner protocol.
//!
//! The runner reads a [`SandboxRequest`] as JSON on stdin and writes a
//! [`SandboxResult`] as JSON on stdout. Scripts it runs report their answer
//! on exactly one stdout line starting with [`RESULT_PREFIX`].

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::model::ModelIR;
use crate::solution::{SolutionCandidate, SolveStatus};
use crate::tensor::Tensor;

use super::process::{run_with_limits, Invocation, ProcessError};
use super::ResourceLimits;

pub const RESULT_PREFIX: &str = "ENGIWEAVE_RESULT: ";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxRequest {
    pub script: String,
    pub wall_clock_seconds: f64,
    pub output_byte_cap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SandboxStatus {
    Ok,
    Timeout,
    Crash,
    ProtocolError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionPackage {
    pub assignment: IndexMap<String, Tensor>,
    #[serde(default)]
    pub objective: Option<f64>,
    pub solver_status: SolveStatus,
    #[serde(default)]
    pub parameter_snapshot: IndexMap<String, Tensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxResult {
    pub status: SandboxStatus,
    #[serde(default)]
    pub package: Option<SolutionPackage>,
    #[serde(default)]
    pub stderr_tail: String,
    #[serde(default)]
    pub elapsed: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("script printed no result line")]
    Missing,
    #[error("script printed {0} result lines")]
    Multiple(usize),
    #[error("result line is not a solution package: {0}")]
    Malformed(String),
}

/// The package from the single result line in `stdout`.
pub fn extract_result(stdout: &str) -> Result<SolutionPackage, ProtocolError> {
    let lines: Vec<&str> = stdout.lines().filter_map(|l| l.strip_prefix(RESULT_PREFIX)).collect();
    match lines[..] {
        [] => Err(ProtocolError::Missing),
        [one] => serde_json::from_str(one).map_err(|e| ProtocolError::Malformed(e.to_string())),
        _ => Err(ProtocolError::Multiple(lines.len())),
    }
}

/// Sends one request to the runner executable and reads its verdict.
pub fn run_sandbox(
    runner: &Invocation,
    req: &SandboxRequest,
    limits: &ResourceLimits,
) -> Result<SandboxResult, ProcessError> {
    let body = serde_json::to_vec(req).expect("request serializes");
    // The runner enforces the script limit itself; allow it a moment to report.
    let outer = ResourceLimits { wall_clock_seconds: req.wall_clock_seconds + 2.0, ..*limits };
    let out = run_with_limits(&runner.clone().with_stdin(body), &outer)?;
    if out.timed_out {
        return Ok(SandboxResult { status: SandboxStatus::Timeout, package: None, stderr_tail: out.stderr, elapsed: out.elapsed_seconds });
    }
    Ok(serde_json::from_str(out.stdout.trim()).unwrap_or(SandboxResult {
        status: SandboxStatus::ProtocolError,
        package: None,
        stderr_tail: out.stderr,
        elapsed: out.elapsed_seconds,
    }))
}

impl SandboxResult {
    /// Candidate for `m`; a package whose variables do not fit the model
    /// becomes an error candidate.
    pub fn into_candidate(self, m: &ModelIR) -> SolutionCandidate {
        let provenance = "sandbox";
        let failed = |status, msg: String| {
            SolutionCandidate::without_point(status, provenance, Some(msg)).with_wall_seconds(self.elapsed)
        };
        match self.status {
            SandboxStatus::Timeout => return failed(SolveStatus::Timeout, "script exceeded the wall-clock limit".into()),
            SandboxStatus::Crash => return failed(SolveStatus::Error, self.stderr_tail.clone()),
            SandboxStatus::ProtocolError => return failed(SolveStatus::Error, "script broke the result protocol".into()),
            SandboxStatus::Ok => {}
        }
        let Some(pkg) = self.package.clone() else {
            return failed(SolveStatus::Error, "runner reported ok without a package".into());
        };
        if !pkg.solver_status.has_point() {
            return failed(pkg.solver_status, format!("script solver reported {}", pkg.solver_status))
                .with_snapshot(pkg.parameter_snapshot);
        }
        let known = m.variables.iter().all(|v| pkg.assignment.get(&v.name).is_some_and(|t| t.shape() == v.dims.as_slice()));
        if !known {
            return failed(SolveStatus::Error, "package assignment does not match the model variables".into());
        }
        let objective = pkg.objective.unwrap_or(f64::NAN);
        SolutionCandidate::with_point(pkg.solver_status, pkg.assignment, objective, provenance)
            .with_snapshot(pkg.parameter_snapshot)
            .with_wall_seconds(self.elapsed)
    }
}

/// Exception-category label of an error text, such as `ImportError` for
/// `ImportError: missing attribute`. The first line is tried, then the last
/// (where tracebacks put the exception).
pub fn exception_label(text: &str) -> Option<String> {
    let first = text.lines().map(str::trim).find(|l| !l.is_empty())?;
    let last = text.lines().map(str::trim).rfind(|l| !l.is_empty())?;
    [first, last].into_iter().find_map(|line| {
        let (head, _) = line.split_once(':')?;
        let name = head.rsplit('.').next()?;
        let valid = !name.is_empty()
            && name.chars().next().is_some_and(|c| c.is_ascii_uppercase())
            && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
            && (name.ends_with("Error") || name.ends_with("Exception") || name.ends_with("Interrupt"));
        valid.then(|| name.to_string())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exactly_one_result_line() {
        let pkg = r#"{"assignment": {"x": 1}, "objective": 1, "solver_status": "optimal"}"#;
        let ok = format!("noise\n{RESULT_PREFIX}{pkg}\n");
        assert_eq!(extract_result(&ok).unwrap().objective, Some(1.0));
        assert_eq!(extract_result("nothing\n"), Err(ProtocolError::Missing));
        let twice = format!("{RESULT_PREFIX}{pkg}\n{RESULT_PREFIX}{pkg}\n");
        assert_eq!(extract_result(&twice), Err(ProtocolError::Multiple(2)));
        // The prefix is bit-exact: no space variant, no lowercase.
        assert_eq!(extract_result(&format!("ENGIWEAVE_RESULT:{pkg}")), Err(ProtocolError::Missing));
    }

    #[test]
    fn labels_from_first_or_last_line() {
        assert_eq!(exception_label("ImportError: missing attribute 'foo'").as_deref(), Some("ImportError"));
        let tb = "Traceback (most recent call last):\n  File \"x.py\", line 1\nModuleNotFoundError: No module named 'pyomo'\n";
        assert_eq!(exception_label(tb).as_deref(), Some("ModuleNotFoundError"));
        assert_eq!(exception_label("pyomo.common.errors.ApplicationError: no solver").as_deref(), Some("ApplicationError"));
        assert_eq!(exception_label("Infeasibility: Bus-2 nodal balance violated"), None);
    }
}
