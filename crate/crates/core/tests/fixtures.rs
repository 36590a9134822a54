use std::path::PathBuf;
use std::time::Instant;

use engiweave::blueprint::{parse_blueprint, validate_blueprint, ModelingBlueprint};
use engiweave::feasibility::{check_assignment, check_solution, DataConsistencyVerdict, FeasibilityReport, TolerancePolicy};
use engiweave::interchange::emit_interchange;
use engiweave::model::{compile_blueprint, zero_assignment, Assignment, ModelIR};
use engiweave::solution::SolveStatus;
use engiweave::solver::{solve_enumeration, ResourceLimits};
use engiweave::tensor::Tensor;

fn fixture(name: &str) -> ModelingBlueprint {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name);
    parse_blueprint(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn set(a: &mut Assignment, var: &str, pos: &[usize], value: f64) {
    let t = a.get_mut(var).unwrap();
    let at = t.offset(pos).unwrap();
    t.data_mut()[at] = value;
}

fn check(m: &ModelIR, a: &Assignment) -> FeasibilityReport {
    check_assignment(m, a, &TolerancePolicy::default(), DataConsistencyVerdict::unchecked()).unwrap()
}

fn violated_rows(r: &FeasibilityReport) -> Vec<String> {
    r.violated().map(|c| c.row_id.clone()).collect()
}

#[test]
fn p35_validates_and_compiles() {
    let bp = fixture("p35.blueprint.json");
    let report = validate_blueprint(&bp);
    assert!(report.is_clean(), "{:?}", report.findings);
    let m = compile_blueprint(&bp).unwrap();
    assert_eq!(m.index_sets["PANELS"].len(), 3);
    assert_eq!(m.index_sets["CONFIGS"].len(), 3);
    let doc = emit_interchange(&m).unwrap();
    let section = |name: &str| {
        let lines: Vec<&str> = doc.lines().collect();
        let start = lines.iter().position(|l| *l == name).unwrap() + 1;
        lines[start..].iter().take_while(|l| !l.chars().all(|c| c.is_ascii_uppercase())).count()
    };
    assert_eq!(section("ROWS"), 9);
    assert_eq!(section("BOUNDS"), 10);
}

fn p35_point(m: &ModelIR) -> Assignment {
    let mut a = zero_assignment(m);
    for (i, n) in [3.0, 102.0, 0.0].into_iter().enumerate() {
        set(&mut a, "n_i", &[i], n);
    }
    set(&mut a, "z_k", &[1], 1.0);
    a.insert("K".into(), Tensor::scalar(3.0 * 0.275 + 102.0 * 0.33));
    set(&mut a, "E_k", &[1], 50000.0);
    a
}

#[test]
fn p35_reported_point_is_feasible() {
    let m = compile_blueprint(&fixture("p35.blueprint.json")).unwrap();
    let a = p35_point(&m);
    let r = check(&m, &a);
    assert!(r.feasible, "{:?}", violated_rows(&r));
    // Area used by 3 + 102 panels.
    let area: f64 = 3.0 * 1.64 + 102.0 * 1.94;
    assert!((area - 202.8).abs() < 1e-9);
    // One panel fewer of type 2 misses the demand row under every config.
    let mut short = a.clone();
    set(&mut short, "n_i", &[1], 101.0);
    short.insert("K".into(), Tensor::scalar(3.0 * 0.275 + 101.0 * 0.33));
    assert!(!check(&m, &short).feasible);
}

#[test]
fn p35_enumeration_finds_reported_optimum() {
    let m = compile_blueprint(&fixture("p35.blueprint.json")).unwrap();
    let started = Instant::now();
    let c = solve_enumeration(&m, &ResourceLimits::default()).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    assert_eq!(c.status, SolveStatus::Optimal, "{:?}", c.message);
    let a = c.assignment.as_ref().unwrap();
    assert_eq!(a["n_i"].data(), &[3.0, 102.0, 0.0]);
    assert_eq!(a["z_k"].data(), &[0.0, 1.0, 0.0]);
    assert!((a["K"].data()[0] - 34.485).abs() <= 1e-9);
    assert!((c.objective_value.unwrap() - 16200.00105).abs() <= 1e-9);
    let capex: f64 = a["n_i"].data().iter().zip([130.0, 155.0, 175.0]).map(|(n, c)| n * c).sum();
    assert_eq!(capex, 16200.0);
    assert!(check_solution(&m, &c, &TolerancePolicy::default()).unwrap().feasible);
    assert!(elapsed < 60.0, "took {elapsed:.1}s");
    eprintln!("p35 enumeration: {elapsed:.2}s");
}

fn p1_zero_demand() -> ModelIR {
    let mut m = compile_blueprint(&fixture("p1.blueprint.json")).unwrap();
    m.parameters["PARAM_01"].value = Tensor::zeros(vec![8]);
    m
}

/// Zero dispatch with the storage held at its initial level.
fn p1_idle(m: &ModelIR) -> Assignment {
    let mut a = zero_assignment(m);
    a.insert("SOC".into(), Tensor::vector(vec![100.0; 9]));
    a
}

#[test]
fn p1_validates_and_idle_point_is_feasible() {
    let bp = fixture("p1.blueprint.json");
    assert!(!validate_blueprint(&bp).has_errors());
    let m = p1_zero_demand();
    let r = check(&m, &p1_idle(&m));
    assert!(r.feasible, "{:?}", violated_rows(&r));
}

#[test]
fn p1_simultaneous_charge_and_discharge_is_flagged() {
    let m = p1_zero_demand();
    let mut a = p1_idle(&m);
    set(&mut a, "u", &[0], 1.0);
    set(&mut a, "v", &[0], 1.0);
    let r = check(&m, &a);
    assert!(!r.feasible);
    assert_eq!(violated_rows(&r), vec!["CONST_06C[1]"]);
}

#[test]
fn p1_storage_above_capacity_is_a_bound_violation() {
    let m = p1_zero_demand();
    let mut a = p1_idle(&m);
    let charge = 150.0 / 0.85;
    set(&mut a, "C", &[0], charge);
    set(&mut a, "u", &[0], 1.0);
    set(&mut a, "W", &[0], 120.0);
    set(&mut a, "G", &[0, 0], charge - 120.0);
    set(&mut a, "Gb", &[0, 0, 0], charge - 120.0);
    for t in 1..9 {
        set(&mut a, "SOC", &[t], 250.0);
    }
    let r = check(&m, &a);
    assert!(!r.feasible);
    assert!(violated_rows(&r).is_empty(), "{:?}", violated_rows(&r));
    assert_eq!(r.bound_violations[0].column, "SOC[1]");
    assert_eq!(r.bound_violations[0].value, 250.0);
    assert_eq!(r.bound_violations.len(), 8);
}

#[test]
fn p1_ramp_beyond_limit_is_flagged() {
    let mut m = p1_zero_demand();
    let mut demand = vec![0.0; 8];
    demand[1] = 210.0;
    m.parameters["PARAM_01"].value = Tensor::vector(demand);
    let mut a = p1_idle(&m);
    set(&mut a, "G", &[0, 1], 210.0);
    set(&mut a, "Gb", &[0, 0, 1], 120.0);
    set(&mut a, "Gb", &[0, 1, 1], 90.0);
    set(&mut a, "G", &[0, 2], 30.0);
    set(&mut a, "Gb", &[0, 0, 2], 30.0);
    set(&mut a, "C", &[2], 30.0);
    set(&mut a, "u", &[2], 1.0);
    for t in 3..9 {
        set(&mut a, "SOC", &[t], 100.0 + 0.85 * 30.0);
    }
    let r = check(&m, &a);
    assert!(!r.feasible);
    assert_eq!(violated_rows(&r), vec!["CONST_03A[1,2]"]);
    assert!(r.bound_violations.is_empty());
}
