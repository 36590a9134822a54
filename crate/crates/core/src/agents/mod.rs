//! The five agent roles, their prompts, backends and reply parsers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

mod backend;
mod parse;
mod prompt;
pub mod template;

pub use backend::{
    invoke_agent, invoke_channel, AgentBackend, BackendConfig, ChatBackend, RemoteBackend, Reply, ScriptedBackend, ScriptedTurn,
    TurnBody,
};
pub use parse::{
    extract_code, first_fenced_block, parse_blueprint_response, parse_evaluator_verdict, parse_verifier_verdict,
    DimensionScores, EvaluatorVerdict, FencedBlock, ParseError, VerifierVerdict,
};
pub use prompt::{render_coordinator_prompt, render_prompt, tolerance_block, PromptContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AgentRole {
    Analyzer,
    Modeler,
    Verifier,
    Solver,
    Evaluator,
}

impl AgentRole {
    pub const ALL: [AgentRole; 5] =
        [AgentRole::Analyzer, AgentRole::Modeler, AgentRole::Verifier, AgentRole::Solver, AgentRole::Evaluator];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Analyzer => "analyzer",
            AgentRole::Modeler => "modeler",
            AgentRole::Verifier => "verifier",
            AgentRole::Solver => "solver",
            AgentRole::Evaluator => "evaluator",
        }
    }

    /// Position in the baseline stage order.
    pub fn stage(self) -> usize {
        self as usize
    }

    pub fn next_stage(self) -> Option<AgentRole> {
        Self::ALL.get(self.stage() + 1).copied()
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown agent `{0}`")]
pub struct UnknownAgent(pub String);

impl FromStr for AgentRole {
    type Err = UnknownAgent;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentTarget::from_str(s).map(|t| t.role)
    }
}

impl Serialize for AgentRole {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for AgentRole {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Alias under which the evaluator performs the final conformance check.
pub const SOLUTION_VERIFIER: &str = "solution_verifier";

/// A role, possibly addressed by an alias. The alias is what traces print.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AgentTarget {
    pub role: AgentRole,
    pub alias: Option<&'static str>,
}

impl AgentTarget {
    pub fn solution_verifier() -> Self {
        Self { role: AgentRole::Evaluator, alias: Some(SOLUTION_VERIFIER) }
    }

    pub fn name(&self) -> &'static str {
        self.alias.unwrap_or(self.role.as_str())
    }
}

impl From<AgentRole> for AgentTarget {
    fn from(role: AgentRole) -> Self {
        Self { role, alias: None }
    }
}

impl fmt::Display for AgentTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentTarget {
    type Err = UnknownAgent;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let word = s.trim().to_ascii_lowercase();
        if word == SOLUTION_VERIFIER {
            return Ok(Self::solution_verifier());
        }
        AgentRole::ALL
            .into_iter()
            .find(|r| r.as_str() == word)
            .map(Self::from)
            .ok_or_else(|| UnknownAgent(s.to_string()))
    }
}

impl Serialize for AgentTarget {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for AgentTarget {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

impl std::ops::AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: Self) {
        self.input_tokens += rhs.input_tokens;
        self.output_tokens += rhs.output_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub text: String,
    pub usage: TokenUsage,
    pub elapsed_seconds: f64,
    pub backend_id: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error("no value for template placeholder `{0}`")]
    MissingContext(String),
    #[error("no scripted reply left for {0}")]
    ScriptExhausted(String),
    #[error("remote backend failed: {message}")]
    RemoteFailure { message: String, retriable: bool },
    #[error("agent did not answer within {0} s")]
    Timeout(f64),
    /// A failure injected by a scripted backend, carried verbatim.
    #[error("{0}")]
    Fault(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl AgentError {
    pub fn label(&self) -> String {
        match self {
            Self::MissingContext(_) => "MissingContext".into(),
            Self::ScriptExhausted(_) => "ScriptExhausted".into(),
            Self::RemoteFailure { .. } => "RemoteFailure".into(),
            Self::Timeout(_) => "Timeout".into(),
            Self::Fault(msg) => crate::solver::sandbox::exception_label(msg).unwrap_or_else(|| "AgentFault".into()),
            Self::Config(_) => "BackendConfig".into(),
        }
    }
}
