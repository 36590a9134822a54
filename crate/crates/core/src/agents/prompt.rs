use std::collections::BTreeMap;

use crate::memory::SessionMemory;

use super::template::{render, Braces};
use super::{AgentError, AgentRole};

const ANALYZER: &str = include_str!("../../prompts/analyzer.txt");
const MODELER: &str = include_str!("../../prompts/modeler.txt");
const VERIFIER: &str = include_str!("../../prompts/verifier.txt");
const VERIFIER_RELIEF: &str = include_str!("../../prompts/verifier_relief.txt");
const VERIFIER_STRICT_RELIEF: &str = include_str!("../../prompts/verifier_strict_relief.txt");
const SOLVER: &str = include_str!("../../prompts/solver.txt");
const EVALUATOR: &str = include_str!("../../prompts/evaluator.txt");
const COORDINATOR: &str = include_str!("../../prompts/coordinator.txt");
const RESULT_PROTOCOL: &str = include_str!("../../prompts/result_protocol.txt");
const FEEDBACK: &str = include_str!("../../prompts/feedback.txt");

/// Values interpolated into prompts, keyed by placeholder name. Lookup
/// chains such as `hmml_analysis.get('domain', ...)` read `hmml_analysis.domain`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PromptContext {
    values: BTreeMap<String, String>,
}

impl PromptContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) -> &mut Self {
        self.values.insert(key.into(), value.into());
        self
    }

    pub fn with(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.set(key, value);
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.values.remove(key)
    }

    fn lookup(&self) -> impl Fn(&str) -> Option<String> + '_ {
        |k| self.values.get(k).cloned()
    }
}

/// Extra verifier instructions for a run of consecutive mismatches.
pub fn tolerance_block(consecutive_verification_failures: u32) -> &'static str {
    if consecutive_verification_failures > 8 {
        VERIFIER_STRICT_RELIEF
    } else if consecutive_verification_failures > 5 {
        VERIFIER_RELIEF
    } else {
        ""
    }
}

/// The prompt for `role`. A non-empty `feedback` value is appended as its
/// own section for the analyzer and modeler; the modeler prompt always ends
/// with the result-line instructions.
pub fn render_prompt(role: AgentRole, ctx: &PromptContext, mem: &SessionMemory) -> Result<String, AgentError> {
    let missing = |e: super::template::MissingContext| AgentError::MissingContext(e.0);
    let mut out = match role {
        AgentRole::Analyzer => render(ANALYZER, Braces::Plain, ctx.lookup()).map_err(missing)?,
        AgentRole::Modeler => {
            let mut s = render(MODELER, Braces::Doubled, ctx.lookup()).map_err(missing)?;
            s.push_str(&render(RESULT_PROTOCOL, Braces::Doubled, ctx.lookup()).map_err(missing)?);
            s
        }
        AgentRole::Verifier => {
            let block = tolerance_block(mem.consecutive_verification_failures());
            let lookup = |k: &str| match k {
                "tolerance_adjustment" => Some(block.to_string()),
                _ => ctx.values.get(k).cloned(),
            };
            render(VERIFIER, Braces::Doubled, lookup).map_err(missing)?
        }
        AgentRole::Solver => render(SOLVER, Braces::Doubled, ctx.lookup()).map_err(missing)?,
        AgentRole::Evaluator => render(EVALUATOR, Braces::Doubled, ctx.lookup()).map_err(missing)?,
    };
    let wants_feedback = matches!(role, AgentRole::Analyzer | AgentRole::Modeler);
    if wants_feedback && ctx.get("feedback").is_some_and(|f| !f.trim().is_empty()) {
        out.push_str(&render(FEEDBACK, Braces::Doubled, ctx.lookup()).map_err(missing)?);
    }
    Ok(out)
}

/// The routing prompt sent to a remote coordinator policy.
pub fn render_coordinator_prompt(ctx: &PromptContext) -> Result<String, AgentError> {
    render(COORDINATOR, Braces::Doubled, ctx.lookup()).map_err(|e| AgentError::MissingContext(e.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn verifier_ctx() -> PromptContext {
        PromptContext::new().with("safe_original_problem", "P").with("safe_pyomo_code", "C")
    }

    #[test]
    fn analyzer_uses_stub_defaults_and_keeps_json_literal() {
        let ctx = PromptContext::new().with("problem_text", "Size a rooftop PV system.");
        let p = render_prompt(AgentRole::Analyzer, &ctx, &SessionMemory::new()).unwrap();
        assert!(p.contains("Size a rooftop PV system."));
        assert!(p.contains("0.50"));
        assert!(p.contains("Engineering optimization problems"));
        assert!(p.contains("\"param_id\""));
        assert!(!p.contains(".get("));
    }

    #[test]
    fn missing_problem_text_is_reported() {
        let err = render_prompt(AgentRole::Analyzer, &PromptContext::new(), &SessionMemory::new()).unwrap_err();
        assert_eq!(err, AgentError::MissingContext("problem_text".into()));
    }

    #[test]
    fn verifier_unescapes_the_verdict_schema() {
        let p = render_prompt(AgentRole::Verifier, &verifier_ctx(), &SessionMemory::new()).unwrap();
        assert!(p.contains("{\n  \"mismatch_detected\": true/false,"));
        assert!(!p.contains("{{"));
    }

    #[test]
    fn tolerance_block_thresholds() {
        assert_eq!(tolerance_block(5), "");
        assert!(tolerance_block(6).contains("Verification difficulties detected"));
        assert!(tolerance_block(8).contains("Verification difficulties detected"));
        assert!(tolerance_block(9).contains("Multiple verification loops detected"));
    }

    #[test]
    fn modeler_carries_result_protocol_and_feedback() {
        let ctx = PromptContext::new().with("analysis_result_str", "{}").with("feedback", "ImportError: x");
        let p = render_prompt(AgentRole::Modeler, &ctx, &SessionMemory::new()).unwrap();
        assert!(p.contains("ENGIWEAVE_RESULT: "));
        assert!(p.ends_with("ImportError: x\n"));
    }
}
