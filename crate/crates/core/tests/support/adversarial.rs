//! Randomized scripted sessions built from the fixture replies, faults and
//! failing execution outcomes.

use std::path::PathBuf;

use engiweave::agents::AgentRole;
use engiweave::coordinator::SessionConfig;
use engiweave::evaluation::{load_dataset, ProblemEntry};
use engiweave::memory::{Outcome, SessionMemory};
use proptest::prelude::*;
use serde_json::{json, Value};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn p35() -> ProblemEntry {
    load_dataset(&fixtures().join("dataset.json")).unwrap().into_iter().find(|p| p.id == "P35").unwrap()
}

const FAULTS: [&str; 3] =
    ["RuntimeError: backend unavailable", "TimeoutError: request timed out", "ValueError: malformed reply"];

fn replies(role: &str) -> &'static [&'static str] {
    match role {
        "analyzer" => &["analyzer_p35.md", "analyzer_broken.md", "analyzer_two_blocks.md"],
        "modeler" => &["modeler_p35.md", "modeler_no_code.md"],
        "verifier" => &["verifier_pass.md", "verifier_mismatch.md"],
        "solver" => &["solver_ack.md"],
        _ => &["evaluator_restart.md", "evaluator_overclaim.md", "evaluator_out_of_range.md", "evaluator_accept.md"],
    }
}

/// Index < 3 picks a fault, anything else a reply file.
fn turn(role: &str, pick: usize) -> Value {
    if pick < FAULTS.len() {
        json!({"fault": FAULTS[pick]})
    } else {
        let files = replies(role);
        json!({"file": format!("../replies/{}", files[(pick - FAULTS.len()) % files.len()])})
    }
}

fn outcome(pick: usize) -> Value {
    match pick % 6 {
        0 => json!({"outcome": "crash", "stderr": "Traceback (most recent call last):\nImportError: missing attribute 'SolverFactoryX' in 'pyomo.environ'\n"}),
        1 => json!({"outcome": "crash", "stderr": "non-linear SoC constraint in the storage balance\n"}),
        2 => json!({"outcome": "crash", "stderr": "RuntimeError: solver process died\n"}),
        3 => json!({"outcome": "timeout"}),
        4 => json!({"outcome": "status", "status": "infeasible", "message": "demand rows cannot be met"}),
        _ => json!({"outcome": "status", "status": "unbounded"}),
    }
}

/// Session configs with `max_steps` 20. Execution never yields a point, so
/// no run reaches the (slow) enumeration fallback.
pub fn adversarial_config() -> impl Strategy<Value = SessionConfig> {
    let queue = || prop::collection::vec(0usize..8, 0..=20);
    (
        [queue(), queue(), queue(), queue(), queue()],
        prop::collection::vec(0usize..6, 20),
        any::<bool>(),
    )
        .prop_map(|(turns, outcomes, fixed)| {
            let roles = ["analyzer", "modeler", "verifier", "solver", "evaluator"];
            let backends: serde_json::Map<String, Value> = roles
                .iter()
                .zip(turns)
                .map(|(role, picks)| {
                    let turns: Vec<Value> = picks.into_iter().map(|p| turn(role, p)).collect();
                    (role.to_string(), json!({"kind": "scripted", "turns": turns}))
                })
                .collect();
            let doc = json!({
                "max_steps": 20,
                "policy": if fixed { "fixed" } else { "rule" },
                "backends": backends,
                "execution": {"kind": "scripted", "outcomes": outcomes.into_iter().map(outcome).collect::<Vec<_>>()},
            });
            SessionConfig::from_json(&doc.to_string(), &fixtures().join("sessions")).unwrap()
        })
}

/// Steps whose target repeats an agent that failed with one error label on
/// each of the `threshold` steps before it.
pub fn repeated_targets(mem: &SessionMemory, threshold: usize) -> Vec<usize> {
    let history = mem.routing_history();
    let entry_at = |step: usize| mem.entries().iter().find(|e| e.step == step);
    let mut bad = Vec::new();
    for k in threshold..history.len() {
        let prev: Option<Vec<_>> = (k + 1 - threshold..=k).map(entry_at).collect();
        let Some(prev) = prev else { continue };
        let first = prev[0];
        let stuck = prev
            .iter()
            .all(|e| e.outcome == Outcome::Failure && e.agent == first.agent && e.error_label == first.error_label);
        if stuck && history[k].target_agent.to_string() == first.agent {
            bad.push(k + 1);
        }
    }
    bad
}

/// Whether every target is the analyzer or the stage after the previous target.
pub fn stage_ordered(mem: &SessionMemory) -> bool {
    let mut prev: Option<AgentRole> = None;
    mem.routing_history().iter().all(|d| {
        let role = d.target_agent.role;
        let ok = role == AgentRole::Analyzer || prev.and_then(AgentRole::next_stage) == Some(role);
        prev = Some(role);
        ok && !d.guard_overridden
    })
}
