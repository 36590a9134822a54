use std::path::PathBuf;

use engiweave::blueprint::parse_blueprint;
use engiweave::model::{compile_blueprint, ModelIR};
use engiweave::solution::{SolutionCandidate, SolveStatus};
use engiweave::solver::{solve_enumeration, solve_external, BackendCommand, ResourceLimits};
use proptest::prelude::*;
use serde_json::json;

fn backend() -> BackendCommand {
    BackendCommand(vec![env!("CARGO_BIN_EXE_engiweave-refsolve").into(), "{model}".into(), "{solution}".into()])
}

#[derive(Debug, Clone)]
struct Milp {
    maximize: bool,
    upper: Vec<u32>,
    objective: Vec<i32>,
    rows: Vec<(Vec<i32>, usize, i32)>,
    continuous_cost: i32,
}

fn milp() -> impl Strategy<Value = Milp> {
    (2usize..=3).prop_flat_map(|n| {
        (
            any::<bool>(),
            prop::collection::vec(1u32..=4, n),
            prop::collection::vec(-5i32..=5, n),
            prop::collection::vec((prop::collection::vec(-4i32..=4, n + 1), 0usize..3, -4i32..=12), 1..=3),
            -3i32..=3,
        )
            .prop_map(|(maximize, upper, objective, rows, continuous_cost)| Milp {
                maximize,
                upper,
                objective,
                rows,
                continuous_cost,
            })
    })
}

fn term(k: i32, var: &str) -> String {
    format!("({k}) * {var}")
}

/// Integer columns x1..xn in [0, upper] plus one continuous column y in [0, 3].
fn model(p: &Milp) -> ModelIR {
    let mut vars: Vec<_> = p
        .upper
        .iter()
        .enumerate()
        .map(|(i, u)| {
            json!({"name": format!("x{}", i + 1), "description": "count", "type": "integer",
                   "domain": format!("[0, {u}]"), "shape": "[]"})
        })
        .collect();
    vars.push(json!({"name": "y", "description": "level", "type": "continuous", "domain": "[0, 3]", "shape": "[]"}));
    let names: Vec<String> = (1..=p.upper.len()).map(|i| format!("x{i}")).chain(["y".to_string()]).collect();
    let mut objective: Vec<String> = p.objective.iter().zip(&names).map(|(k, v)| term(*k, v)).collect();
    objective.push(term(p.continuous_cost, "y"));
    let constraints: Vec<_> = p
        .rows
        .iter()
        .enumerate()
        .map(|(r, (coeffs, rel, rhs))| {
            let lhs: Vec<String> = coeffs.iter().zip(&names).map(|(k, v)| term(*k, v)).collect();
            let op = ["<=", ">=", "=="][*rel];
            json!({"constraint_id": format!("CONST_{:02}", r + 1), "name": format!("Row{r}"),
                   "expression": format!("{} {op} {rhs}", lhs.join(" + ")), "category": "Resource Capacity",
                   "description": "generated row"})
        })
        .collect();
    let doc = json!({
        "modeling_context": {"problem_essence": "generated", "engineering_domain": "test",
                             "modeling_paradigm": "MILP", "solution_scope": "small"},
        "core_model_elements": {
            "description": "generated MILP",
            "decision_variables": vars,
            "parameters": [],
            "objective_function": {"name": "Obj", "type": if p.maximize { "maximize" } else { "minimize" },
                                   "expression": objective.join(" + "), "components": []},
            "constraints": constraints
        },
        "extended_analysis_and_robustness": {
            "description": "none", "key_assumptions": [], "uncertainty_sources": [],
            "trade_off_analysis": {"secondary_objectives": [], "soft_constraints": []},
            "sensitivity_factors": [], "notes": ""
        }
    });
    compile_blueprint(&parse_blueprint(&doc.to_string()).unwrap()).unwrap()
}

fn objective(c: &SolutionCandidate) -> f64 {
    c.objective_value.unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn enumeration_agrees_with_reference_backend(p in milp()) {
        let m = model(&p);
        let limits = ResourceLimits::default();
        let ours = solve_enumeration(&m, &limits).unwrap();
        let theirs = solve_external(&m, &backend(), &limits).unwrap();
        match (ours.status, theirs.status) {
            (SolveStatus::Optimal, SolveStatus::Optimal) => {
                let (a, b) = (objective(&ours), objective(&theirs));
                prop_assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()), "enumeration {a} vs reference {b}");
            }
            (SolveStatus::Infeasible, SolveStatus::Infeasible) => {}
            (a, b) => prop_assert!(false, "status {a} vs {b}; reference message {:?}", theirs.message),
        }
    }
}

#[test]
fn p35_reference_optimum() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/p35.blueprint.json");
    let m = compile_blueprint(&parse_blueprint(&std::fs::read_to_string(path).unwrap()).unwrap()).unwrap();
    let c = solve_external(&m, &backend(), &ResourceLimits::default()).unwrap();
    assert_eq!(c.status, SolveStatus::Optimal, "{:?}", c.message);
    assert!((objective(&c) - 16200.00105).abs() <= 1e-6 * 16200.0);
    assert_eq!(c.assignment.as_ref().unwrap()["n_i"].data(), &[3.0, 102.0, 0.0]);
}
