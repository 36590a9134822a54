use serde_json::{Map, Value};

use crate::agents::{first_fenced_block, AgentRole, AgentTarget};

use super::{PolicyMode, Priority, RoutingDecision};

/// What happened at the previous step.
#[derive(Debug, Clone, PartialEq)]
pub enum LastStep {
    Completed(AgentTarget),
    Failed(Failure),
    RestartRequested,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    /// Agent the step was routed to.
    pub acted: AgentTarget,
    /// Agent the failure is attributed to; its debug entry carries the label.
    pub responsible: AgentTarget,
    pub label: String,
    pub message: String,
    /// Stage whose artifact was missing, for `MissingArtifact`.
    pub missing: Option<AgentRole>,
}

pub const MISSING_ARTIFACT: &str = "MissingArtifact";
pub const RESTART_REQUESTED: &str = "RestartRequested";

/// Which stage artifacts exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Artifacts {
    pub blueprint: bool,
    pub code: bool,
    pub model: bool,
    pub solution: bool,
}

impl Artifacts {
    /// The stage that must run before `role` can, if any.
    pub fn gap(&self, role: AgentRole) -> Option<AgentRole> {
        let needs = match role {
            AgentRole::Analyzer => return None,
            AgentRole::Modeler => [(self.blueprint, AgentRole::Analyzer)].to_vec(),
            AgentRole::Verifier | AgentRole::Solver => {
                vec![(self.blueprint, AgentRole::Analyzer), (self.code && self.model, AgentRole::Modeler)]
            }
            AgentRole::Evaluator => vec![
                (self.blueprint, AgentRole::Analyzer),
                (self.code && self.model, AgentRole::Modeler),
                (self.solution, AgentRole::Solver),
            ],
        };
        needs.into_iter().find(|(have, _)| !have).map(|(_, stage)| stage)
    }
}

/// The state a policy routes on.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionView {
    pub last: Option<LastStep>,
    pub artifacts: Artifacts,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unusable routing reply: {0}")]
pub struct PolicyFailure(pub String);

fn one_line(text: &str, limit: usize) -> String {
    let s = text.split_whitespace().collect::<Vec<_>>().join(" ");
    match s.char_indices().nth(limit) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s,
    }
}

fn is_exception_label(label: &str) -> bool {
    label.chars().next().is_some_and(|c| c.is_ascii_uppercase())
        && ["Error", "Exception", "Interrupt"].iter().any(|s| label.ends_with(s))
}

/// Rule-policy target for a failure, with priority and the recorded success estimate.
pub fn route_for_failure(f: &Failure) -> (AgentTarget, Priority, f64, String, String) {
    use AgentRole::*;
    let label = f.label.as_str();
    let code_faults =
        ["ExpressionSyntax", "UnresolvedSymbol", "DimensionMismatch", "DuplicateSymbol", "UnknownIndexSet", "InvalidDomain", "DivisionByZero", "MissingCode", "ResultProtocol"];
    let formulation = [
        "StructuralNonlinearity",
        "NonlinearModel",
        "UnsupportedStructure",
        "Unbounded",
        "MalformedDocument",
        "SchemaViolation",
        "BlueprintInvalid",
        "VagueModeling",
        "OverConstrained",
        RESTART_REQUESTED,
    ];
    if label == crate::memory::MISMATCH {
        return (
            Modeler.into(),
            Priority::High,
            0.72,
            "Apply the verifier's suggestion and regenerate the model code".into(),
            "The mismatch is localized in model construction; no conceptual redesign is needed.".into(),
        );
    }
    if label == MISSING_ARTIFACT {
        let stage = f.missing.unwrap_or(Analyzer);
        return (
            stage.into(),
            Priority::Medium,
            0.5,
            format!("Produce the {stage} artifact that {} needs", f.acted),
            format!("{} cannot run before {stage} has produced its output.", f.acted),
        );
    }
    if formulation.contains(&label) {
        return (
            Analyzer.into(),
            Priority::Medium,
            0.55,
            "Re-inspect the formulation and propose a solvable, linear alternative".into(),
            format!("{label} is a formulation issue that needs a domain-level pass before code regeneration."),
        );
    }
    if ["Infeasibility", "PhysicsViolation", "Unknown"].contains(&label) {
        return (
            Verifier.into(),
            Priority::Medium,
            0.63,
            "Locate the source of the failure and check the model against the problem statement".into(),
            format!("{label} points to a semantic misalignment between model and problem, not a syntax fault."),
        );
    }
    if label == "AlteredData" {
        return (
            Modeler.into(),
            Priority::High,
            0.6,
            "Restore the parameter values stated in the problem".into(),
            "The solution used parameter values that differ from the problem data.".into(),
        );
    }
    if code_faults.contains(&label) || (is_exception_label(label) && f.responsible.role == Modeler) {
        return (
            Modeler.into(),
            Priority::High,
            0.40,
            format!("Fix the code-level fault ({label}) and regenerate the model"),
            "The failure originates in model construction; the modeler is responsible for code-level fixes.".into(),
        );
    }
    (
        f.responsible,
        Priority::Low,
        0.30,
        format!("Retry {} after {label}", f.responsible),
        format!("{label} is transient or local to {}.", f.responsible),
    )
}

fn start_decision() -> RoutingDecision {
    RoutingDecision::new(
        "New problem received",
        AgentRole::Analyzer.into(),
        "Analyze the problem and produce the modeling blueprint",
        Priority::Medium,
        0.5,
        true,
        "Every session starts from problem analysis.",
    )
}

fn rule_route(view: &SessionView) -> RoutingDecision {
    let mut d = match &view.last {
        None => start_decision(),
        Some(LastStep::Completed(t)) if t.role == AgentRole::Solver => RoutingDecision::new(
            "Feasible solution obtained but pending specification-level validation",
            AgentTarget::solution_verifier(),
            "Validate the solution against the problem specification and commit",
            Priority::High,
            0.89,
            false,
            "All declared constraints are satisfied; a final conformance check is required before commitment.",
        ),
        Some(LastStep::Completed(t)) => {
            let next = t.role.next_stage().unwrap_or(AgentRole::Evaluator);
            RoutingDecision::new(
                format!("{t} completed"),
                next.into(),
                format!("Continue with the {next} stage"),
                Priority::Medium,
                0.7,
                true,
                format!("{t} finished cleanly; the next stage in order is {next}."),
            )
        }
        Some(LastStep::RestartRequested) => RoutingDecision::new(
            "Evaluator requested a restart",
            AgentRole::Analyzer.into(),
            "Restart from problem analysis with the evaluator's commentary",
            Priority::Medium,
            0.5,
            true,
            "The evaluator judged the solution unusable.",
        ),
        Some(LastStep::Failed(f)) => {
            let (target, priority, rate, strategy, reasoning) = route_for_failure(f);
            let trigger = if f.message.trim().is_empty() { f.label.clone() } else { one_line(&f.message, 240) };
            RoutingDecision::new(trigger, target, strategy, priority, rate, true, reasoning)
        }
    };
    if let Some(stage) = view.artifacts.gap(d.target_agent.role) {
        d.reasoning = format!("{} {} has no input yet, so {stage} runs first.", d.reasoning, d.target_agent);
        d.target_agent = stage.into();
    }
    d
}

fn fixed_route(view: &SessionView) -> RoutingDecision {
    match &view.last {
        None => start_decision(),
        Some(LastStep::Completed(t)) => {
            let next = t.role.next_stage().unwrap_or(AgentRole::Evaluator);
            RoutingDecision::new(
                format!("{t} completed"),
                next.into(),
                format!("Continue with the {next} stage"),
                Priority::Medium,
                0.7,
                true,
                "Fixed pipeline: advance to the next stage.",
            )
        }
        Some(LastStep::Failed(f)) => RoutingDecision::new(
            if f.message.trim().is_empty() { f.label.clone() } else { one_line(&f.message, 240) },
            AgentRole::Analyzer.into(),
            "Restart the pipeline from problem analysis",
            Priority::Medium,
            0.5,
            true,
            format!("Fixed pipeline: {} failed with {}, restart from the first stage.", f.acted, f.label),
        ),
        Some(LastStep::RestartRequested) => RoutingDecision::new(
            "Evaluator requested a restart",
            AgentRole::Analyzer.into(),
            "Restart the pipeline from problem analysis",
            Priority::Medium,
            0.5,
            true,
            "Fixed pipeline: restart from the first stage.",
        ),
    }
}

/// The decision of a built-in policy. The remote policy is driven by the
/// session loop, which falls back to this function's rule decisions.
pub fn next_route(view: &SessionView, mode: PolicyMode) -> RoutingDecision {
    match mode {
        PolicyMode::Fixed => fixed_route(view),
        PolicyMode::Rule | PolicyMode::Remote => rule_route(view),
    }
}

fn text(map: &Map<String, Value>, k: &str) -> Result<String, PolicyFailure> {
    map.get(k).and_then(Value::as_str).map(str::to_string).ok_or_else(|| PolicyFailure(format!("`{k}` missing")))
}

/// A routing record from a coordinator reply: a fenced JSON object with the seven fields.
pub fn parse_routing_reply(reply: &str) -> Result<RoutingDecision, PolicyFailure> {
    let block = first_fenced_block(reply).map_err(|e| PolicyFailure(e.to_string()))?;
    let map = match serde_json::from_str::<Value>(&block.body) {
        Ok(Value::Object(m)) => m,
        Ok(_) => return Err(PolicyFailure("block is not a JSON object".into())),
        Err(e) => return Err(PolicyFailure(e.to_string())),
    };
    let target_text = text(&map, "target_agent")?;
    let target_agent: AgentTarget = target_text.parse().map_err(|e| PolicyFailure(format!("{e}")))?;
    let priority_text = text(&map, "priority")?;
    let priority = Priority::parse(&priority_text).ok_or_else(|| PolicyFailure(format!("priority `{priority_text}`")))?;
    let rate = map
        .get("estimated_success_rate")
        .and_then(Value::as_f64)
        .ok_or_else(|| PolicyFailure("`estimated_success_rate` missing".into()))?;
    if !(0.0..=1.0).contains(&rate) {
        return Err(PolicyFailure(format!("estimated_success_rate {rate} outside [0, 1]")));
    }
    let should_continue =
        map.get("should_continue").and_then(Value::as_bool).ok_or_else(|| PolicyFailure("`should_continue` missing".into()))?;
    Ok(RoutingDecision::new(
        text(&map, "trigger_signal")?,
        target_agent,
        text(&map, "strategy")?,
        priority,
        rate,
        should_continue,
        text(&map, "reasoning")?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn failed(responsible: AgentRole, label: &str, message: &str) -> SessionView {
        SessionView {
            last: Some(LastStep::Failed(Failure {
                acted: AgentRole::Solver.into(),
                responsible: responsible.into(),
                label: label.into(),
                message: message.into(),
                missing: None,
            })),
            artifacts: Artifacts { blueprint: true, code: true, model: true, solution: false },
        }
    }

    #[test]
    fn import_failure_goes_to_modeler() {
        let msg = "ImportError: missing attribute `suffixes' from `pyomo.environ'";
        let d = next_route(&failed(AgentRole::Modeler, "ImportError", msg), PolicyMode::Rule);
        assert_eq!((d.target_agent, d.priority), (AgentRole::Modeler.into(), Priority::High));
        assert_eq!(d.trigger_signal, msg);
        assert_eq!(d.estimated_success_rate, 0.40);
    }

    #[test]
    fn nonlinearity_goes_to_analyzer() {
        let view = failed(AgentRole::Analyzer, "StructuralNonlinearity", "non-linear SoC constraint");
        let d = next_route(&view, PolicyMode::Rule);
        assert_eq!((d.target_agent, d.priority), (AgentRole::Analyzer.into(), Priority::Medium));
    }

    #[test]
    fn solved_goes_to_solution_verifier_and_stops() {
        let view = SessionView {
            last: Some(LastStep::Completed(AgentRole::Solver.into())),
            artifacts: Artifacts { blueprint: true, code: true, model: true, solution: true },
        };
        let d = next_route(&view, PolicyMode::Rule);
        assert_eq!(d.target_agent.to_string(), "solution_verifier");
        assert!(!d.should_continue);
    }

    #[test]
    fn missing_input_redirects_upstream() {
        let mut view = failed(AgentRole::Solver, "Infeasibility", "Infeasibility: x");
        view.artifacts = Artifacts::default();
        assert_eq!(next_route(&view, PolicyMode::Rule).target_agent, AgentRole::Analyzer.into());
    }

    #[test]
    fn fixed_mode_restarts_on_failure() {
        let d = next_route(&failed(AgentRole::Modeler, "ImportError", "x"), PolicyMode::Fixed);
        assert_eq!(d.target_agent, AgentRole::Analyzer.into());
    }

    #[test]
    fn routing_reply_schema() {
        let reply = "```json\n{\"trigger_signal\": \"t\", \"target_agent\": \"solution_verifier\", \"strategy\": \"s\",\
                     \"priority\": \"high\", \"estimated_success_rate\": 0.89, \"should_continue\": false, \"reasoning\": \"r\"}\n```";
        let d = parse_routing_reply(reply).unwrap();
        assert_eq!(d.target_agent, AgentTarget::solution_verifier());
        assert!(parse_routing_reply(&reply.replace("0.89", "1.89")).is_err());
        assert!(parse_routing_reply(&reply.replace("high", "urgent")).is_err());
        assert!(parse_routing_reply("no block").is_err());
    }
}
