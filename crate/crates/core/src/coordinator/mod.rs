//! Routing between agents: policies, hard guards and the session loop.

use std::fmt;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::agents::{AgentError, AgentRole, AgentTarget, BackendConfig};
use crate::evaluation::PricingTable;
use crate::feasibility::TolerancePolicy;
use crate::memory::{Outcome, SessionMemory};
use crate::solution::SolveStatus;
use crate::solver::{BackendCommand, ResourceLimits};

mod policy;
mod session;

pub use policy::{next_route, parse_routing_reply, route_for_failure, PolicyFailure};
pub use session::{run_session, SessionResult, SessionStatus, UsageTotals};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Priority {
    Low,
    Medium,
    High,
}

impl Priority {
    pub fn parse(text: &str) -> Option<Self> {
        match text.trim().to_ascii_lowercase().as_str() {
            "low" => Some(Priority::Low),
            "medium" => Some(Priority::Medium),
            "high" => Some(Priority::High),
            _ => None,
        }
    }
}

impl fmt::Display for Priority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Priority::Low => "low",
            Priority::Medium => "medium",
            Priority::High => "high",
        })
    }
}

/// One coordinator step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub trigger_signal: String,
    pub target_agent: AgentTarget,
    pub strategy: String,
    pub priority: Priority,
    /// Recorded and reported; never used for control.
    pub estimated_success_rate: f64,
    pub should_continue: bool,
    pub reasoning: String,
    #[serde(default)]
    pub guard_overridden: bool,
    #[serde(default)]
    pub original_target: Option<AgentTarget>,
}

impl RoutingDecision {
    pub fn new(
        trigger_signal: impl Into<String>,
        target_agent: AgentTarget,
        strategy: impl Into<String>,
        priority: Priority,
        estimated_success_rate: f64,
        should_continue: bool,
        reasoning: impl Into<String>,
    ) -> Self {
        Self {
            trigger_signal: trigger_signal.into(),
            target_agent,
            strategy: strategy.into(),
            priority,
            estimated_success_rate,
            should_continue,
            reasoning: reasoning.into(),
            guard_overridden: false,
            original_target: None,
        }
    }

    /// The seven routing fields as `name: value` lines.
    pub fn render(&self) -> String {
        let mut s = format!(
            "trigger_signal: {}\ntarget_agent: {}\nstrategy: {}\npriority: {}\nestimated_success_rate: {:.2}\nshould_continue: {}\nreasoning: {}",
            self.trigger_signal,
            self.target_agent,
            self.strategy,
            self.priority,
            self.estimated_success_rate,
            self.should_continue,
            self.reasoning
        );
        if let Some(orig) = self.original_target.filter(|_| self.guard_overridden) {
            s.push_str(&format!("\nguard_overridden: true (policy chose {orig})"));
        } else if self.guard_overridden {
            s.push_str("\nguard_overridden: true");
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PolicyMode {
    #[default]
    #[serde(rename = "rule")]
    Rule,
    #[serde(rename = "remote")]
    Remote,
    /// Strict stage order: success moves on, failure restarts at the analyzer.
    #[serde(rename = "fixed", alias = "fixed-pipeline", alias = "fixed_pipeline")]
    Fixed,
}

impl PolicyMode {
    pub fn parse(text: &str) -> Option<Self> {
        serde_json::from_value(serde_json::Value::String(text.trim().to_ascii_lowercase())).ok()
    }
}

/// One queued outcome of the scripted execution backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ScriptedExecution {
    /// The model script died; `stderr` is what it printed.
    Crash { stderr: String },
    Timeout,
    /// The solver finished without a point.
    Status {
        status: SolveStatus,
        #[serde(default)]
        message: Option<String>,
    },
    /// Solve the compiled model by enumeration.
    Enumerate,
}

/// How the solver stage executes a model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExecutionConfig {
    #[default]
    Enumeration,
    External { command: BackendCommand },
    /// Hands the modeler's script to a runner process speaking the sandbox protocol.
    Sandbox {
        runner: Vec<String>,
        #[serde(default = "default_output_cap")]
        output_byte_cap: usize,
    },
    /// Replays outcomes in order, then falls back to enumeration.
    Scripted { outcomes: Vec<ScriptedExecution> },
}

fn default_output_cap() -> usize {
    1 << 20
}

impl ExecutionConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ExecutionConfig::Enumeration => "enumeration",
            ExecutionConfig::External { .. } => "external",
            ExecutionConfig::Sandbox { .. } => "sandbox",
            ExecutionConfig::Scripted { .. } => "scripted",
        }
    }
}

fn default_max_steps() -> usize {
    20
}

fn default_threshold() -> u32 {
    3
}

fn default_fallback() -> Vec<AgentRole> {
    AgentRole::ALL.to_vec()
}

fn default_agent_timeout() -> f64 {
    300.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_threshold")]
    pub forced_switch_threshold: u32,
    #[serde(default = "default_fallback")]
    pub fallback_order: Vec<AgentRole>,
    /// Limits for the solver stage.
    #[serde(default)]
    pub limits: ResourceLimits,
    #[serde(default = "default_agent_timeout")]
    pub agent_timeout_seconds: f64,
    #[serde(default)]
    pub policy: PolicyMode,
    pub backends: IndexMap<AgentRole, BackendConfig>,
    /// Backend answering routing prompts when `policy` is remote.
    #[serde(default)]
    pub coordinator_backend: Option<BackendConfig>,
    #[serde(default)]
    pub execution: ExecutionConfig,
    #[serde(default)]
    pub tolerance: TolerancePolicy,
    /// Model whose rates price the session's tokens.
    #[serde(default)]
    pub pricing_model: Option<String>,
    #[serde(default)]
    pub pricing: Option<PricingTable>,
    /// Static values for the analyzer's knowledge-retrieval placeholders,
    /// keyed like `hmml_analysis.domain`.
    #[serde(default)]
    pub knowledge: IndexMap<String, String>,
    /// Directory that relative paths in the file resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {}: {}", .0.display(), .1)]
    Io(PathBuf, String),
    #[error("invalid configuration: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Backend(#[from] AgentError),
}

impl SessionConfig {
    /// A rule-policy configuration with the given backends and defaults elsewhere.
    pub fn new(backends: IndexMap<AgentRole, BackendConfig>) -> Self {
        Self {
            max_steps: default_max_steps(),
            forced_switch_threshold: default_threshold(),
            fallback_order: default_fallback(),
            limits: ResourceLimits::default(),
            agent_timeout_seconds: default_agent_timeout(),
            policy: PolicyMode::Rule,
            backends,
            coordinator_backend: None,
            execution: ExecutionConfig::Enumeration,
            tolerance: TolerancePolicy::default(),
            pricing_model: None,
            pricing: None,
            knowledge: IndexMap::new(),
            base_dir: PathBuf::from("."),
        }
    }

    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: SessionConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e.to_string()))?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.max_steps == 0 {
            return invalid("max_steps must be positive".into());
        }
        if self.forced_switch_threshold < 2 {
            return invalid("forced_switch_threshold must be at least 2".into());
        }
        let distinct: std::collections::BTreeSet<_> = self.fallback_order.iter().collect();
        if distinct.len() < 2 {
            return invalid("fallback_order needs at least two roles".into());
        }
        if self.limits.validate().is_err() || !(self.agent_timeout_seconds > 0.0) {
            return invalid("limits must be positive".into());
        }
        if !self.tolerance.is_valid() {
            return invalid("tolerances must be non-negative".into());
        }
        if let Some(missing) = AgentRole::ALL.iter().find(|r| !self.backends.contains_key(*r)) {
            return invalid(format!("no backend configured for {missing}"));
        }
        if self.policy == PolicyMode::Remote && self.coordinator_backend.is_none() {
            return invalid("remote policy needs a coordinator_backend".into());
        }
        if let ExecutionConfig::Sandbox { runner, .. } = &self.execution {
            if runner.is_empty() {
                return invalid("sandbox runner command is empty".into());
            }
        }
        Ok(())
    }

    pub fn agent_limits(&self) -> ResourceLimits {
        ResourceLimits { wall_clock_seconds: self.agent_timeout_seconds, ..self.limits }
    }
}

/// Rewrites a decision that would repeat an agent stuck on the same error,
/// and forbids continuing on the last step of the budget. The replacement is
/// the first role in the fallback order not itself stuck on that error.
/// The fixed pipeline never switches; it only gets the budget guard.
pub fn apply_guards(mut d: RoutingDecision, mem: &SessionMemory, cfg: &SessionConfig) -> RoutingDecision {
    let last_failure = mem.last_entry().filter(|e| e.outcome == Outcome::Failure && cfg.policy != PolicyMode::Fixed);
    if let Some(last) = last_failure {
        let target = d.target_agent.name();
        let count = mem.consecutive_failures(target, &last.error_label);
        if count >= cfg.forced_switch_threshold {
            let others = || cfg.fallback_order.iter().filter(|r| **r != d.target_agent.role);
            let fresh = others().find(|r| mem.consecutive_failures(r.as_str(), &last.error_label) < cfg.forced_switch_threshold);
            if let Some(&alt) = fresh.or_else(|| others().next()) {
                d.reasoning = format!(
                    "{} [forced switch: {target} failed {count} times in a row with {}]",
                    d.reasoning, last.error_label
                );
                d.original_target = Some(d.target_agent);
                d.target_agent = alt.into();
                d.guard_overridden = true;
            }
        }
    }
    if mem.step_count() + 1 >= cfg.max_steps {
        d.should_continue = false;
    }
    d
}
