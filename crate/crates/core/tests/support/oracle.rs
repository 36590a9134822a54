//! Random small indexed models and a scalar-expansion oracle for them.
//!
//! Models are kept in a plain structure, rendered to blueprint JSON for the
//! library, and evaluated here by direct loops. All data are integers and
//! assignments are multiples of 0.5, so both sides compute exactly.

use engiweave::blueprint::parse_blueprint;
use engiweave::feasibility::{check_assignment, DataConsistencyVerdict, TolerancePolicy};
use engiweave::model::{compile_blueprint, Assignment, ModelIR};
use engiweave::tensor::Tensor;
use proptest::prelude::*;
use serde_json::json;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kind {
    Continuous,
    Integer,
    Binary,
}

#[derive(Debug, Clone)]
pub struct Var {
    /// Index sets by position: 0 is S1, 1 is S2.
    pub dims: Vec<usize>,
    pub kind: Kind,
    pub lo: i32,
    pub hi: i32,
}

#[derive(Debug, Clone)]
pub struct Term {
    pub var: usize,
    pub coef: i32,
    /// Multiply by the weight parameter of the var's own set (1-D vars only).
    pub weighted: bool,
}

#[derive(Debug, Clone)]
pub enum Rhs {
    Const(i32),
    Scalar,
    /// Weight of the quantified set at the row's index; `r` for single rows.
    Indexed,
}

#[derive(Debug, Clone)]
pub struct Family {
    pub quant: Option<usize>,
    pub terms: Vec<Term>,
    /// 0 `<=`, 1 `>=`, 2 `==`.
    pub rel: usize,
    pub rhs: Rhs,
}

#[derive(Debug, Clone)]
pub struct RandomModel {
    pub sizes: [usize; 2],
    pub weights: [Vec<i32>; 2],
    pub r: i32,
    pub vars: Vec<Var>,
    pub families: Vec<Family>,
}

/// Values per variable, in row-major order, as multiples of 0.5.
pub type Point = Vec<Vec<f64>>;

const SETS: [&str; 2] = ["S1", "S2"];

fn var_name(v: usize) -> String {
    format!("x{}", v + 1)
}

impl RandomModel {
    fn len(&self, v: &Var) -> usize {
        v.dims.iter().map(|d| self.sizes[*d]).product()
    }

    fn render_term(&self, t: &Term, quant: Option<usize>) -> String {
        let v = &self.vars[t.var];
        let name = var_name(t.var);
        let c = t.coef;
        match v.dims.as_slice() {
            [] => format!("({c}) * {name}"),
            [s] => {
                let idx = if quant == Some(*s) { "i" } else { "j" };
                let w = if t.weighted { format!("w{}[{idx}] * ", s + 1) } else { String::new() };
                let body = format!("({c}) * {w}{name}[{idx}]");
                if quant == Some(*s) {
                    body
                } else {
                    format!("sum({body} for j in {})", SETS[*s])
                }
            }
            _ => match quant {
                Some(0) => format!("sum(({c}) * {name}[i,j] for j in S2)"),
                Some(_) => format!("sum(({c}) * {name}[j,i] for j in S1)"),
                None => format!("sum(({c}) * {name}[j,l] for j in S1, l in S2)"),
            },
        }
    }

    fn render_family(&self, f: &Family) -> String {
        let lhs: Vec<String> = f.terms.iter().map(|t| self.render_term(t, f.quant)).collect();
        let rhs = match (&f.rhs, f.quant) {
            (Rhs::Const(k), _) => k.to_string(),
            (Rhs::Indexed, Some(s)) => format!("w{}[i]", s + 1),
            (Rhs::Scalar | Rhs::Indexed, _) => "r".to_string(),
        };
        let op = ["<=", ">=", "=="][f.rel];
        let quant = f.quant.map(|s| format!(" for i in {}", SETS[s])).unwrap_or_default();
        format!("{} {op} {rhs}{quant}", lhs.join(" + "))
    }

    pub fn blueprint_json(&self) -> String {
        let vars: Vec<_> = self
            .vars
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let (ty, domain) = match v.kind {
                    Kind::Continuous => ("continuous", format!("[{}, {}]", v.lo, v.hi)),
                    Kind::Integer => ("integer", format!("[{}, {}]", v.lo, v.hi)),
                    Kind::Binary => ("binary", "{0,1}".to_string()),
                };
                let shape = format!("[{}]", v.dims.iter().map(|d| SETS[*d]).collect::<Vec<_>>().join(", "));
                json!({"name": var_name(i), "description": "generated", "type": ty, "domain": domain, "shape": shape})
            })
            .collect();
        let param = |id: usize, name: &str, value: serde_json::Value| {
            json!({"param_id": format!("PARAM_{id:02}"), "name": name, "value": value, "unit": "-",
                   "description": "generated", "source_reference": "generated"})
        };
        let constraints: Vec<_> = self
            .families
            .iter()
            .enumerate()
            .map(|(k, f)| {
                json!({"constraint_id": format!("CONST_{:02}", k + 1), "name": format!("Family{k}"),
                       "expression": self.render_family(f), "category": "Resource Capacity",
                       "description": "generated family"})
            })
            .collect();
        let sets = |n: usize| (1..=n as i64).collect::<Vec<_>>();
        json!({
            "modeling_context": {"problem_essence": "generated", "engineering_domain": "test",
                                 "modeling_paradigm": "MILP", "solution_scope": "small"},
            "core_model_elements": {
                "description": "generated model",
                "index_sets": {"S1": sets(self.sizes[0]), "S2": sets(self.sizes[1])},
                "decision_variables": vars,
                "parameters": [
                    param(1, "w1", json!(self.weights[0])),
                    param(2, "w2", json!(self.weights[1])),
                    param(3, "r", json!(self.r)),
                ],
                "objective_function": {"name": "Obj", "type": "minimize", "expression": "0", "components": []},
                "constraints": constraints
            },
            "extended_analysis_and_robustness": {
                "description": "none", "key_assumptions": [], "uncertainty_sources": [],
                "trade_off_analysis": {"secondary_objectives": [], "soft_constraints": []},
                "sensitivity_factors": [], "notes": ""
            }
        })
        .to_string()
    }

    pub fn compile(&self) -> ModelIR {
        let bp = parse_blueprint(&self.blueprint_json()).expect("generated blueprint parses");
        compile_blueprint(&bp).expect("generated blueprint compiles")
    }

    fn term_value(&self, t: &Term, quant: Option<usize>, b: usize, x: &Point) -> f64 {
        let v = &self.vars[t.var];
        let vals = &x[t.var];
        let c = f64::from(t.coef);
        match v.dims.as_slice() {
            [] => c * vals[0],
            [s] => {
                let w = |j: usize| if t.weighted { f64::from(self.weights[*s][j]) } else { 1.0 };
                if quant == Some(*s) {
                    c * w(b) * vals[b]
                } else {
                    (0..self.sizes[*s]).map(|j| c * w(j) * vals[j]).sum()
                }
            }
            _ => {
                let n2 = self.sizes[1];
                match quant {
                    Some(0) => (0..n2).map(|j| c * vals[b * n2 + j]).sum(),
                    Some(_) => (0..self.sizes[0]).map(|j| c * vals[j * n2 + b]).sum(),
                    None => vals.iter().map(|v| c * v).sum(),
                }
            }
        }
    }

    /// `(row id, satisfied)` for every expanded row, in declaration order.
    pub fn oracle_rows(&self, x: &Point, tol: &TolerancePolicy) -> Vec<(String, bool)> {
        let mut out = Vec::new();
        for (k, f) in self.families.iter().enumerate() {
            let id = format!("CONST_{:02}", k + 1);
            let rows: Vec<Option<usize>> = match f.quant {
                Some(s) => (0..self.sizes[s]).map(Some).collect(),
                None => vec![None],
            };
            for b in rows {
                let lhs: f64 = f.terms.iter().map(|t| self.term_value(t, f.quant, b.unwrap_or(0), x)).sum();
                let rhs = match (&f.rhs, f.quant, b) {
                    (Rhs::Const(k), _, _) => f64::from(*k),
                    (Rhs::Indexed, Some(s), Some(b)) => f64::from(self.weights[s][b]),
                    _ => f64::from(self.r),
                };
                let allowed = tol.eps_abs + tol.eps_rel * lhs.abs().max(rhs.abs());
                let ok = match f.rel {
                    0 => lhs <= rhs + allowed,
                    1 => lhs >= rhs - allowed,
                    _ => (lhs - rhs).abs() <= allowed,
                };
                let row_id = match b {
                    Some(b) => format!("{id}[{}]", b + 1),
                    None => id.clone(),
                };
                out.push((row_id, ok));
            }
        }
        out
    }

    /// Columns outside their bounds, and discrete columns off the integers.
    pub fn oracle_columns(&self, x: &Point) -> (usize, usize) {
        let mut bounds = 0;
        let mut integrality = 0;
        for (v, vals) in self.vars.iter().zip(x) {
            for &val in vals {
                if val < f64::from(v.lo) || val > f64::from(v.hi) {
                    bounds += 1;
                }
                if v.kind != Kind::Continuous && val.fract() != 0.0 {
                    integrality += 1;
                }
            }
        }
        (bounds, integrality)
    }

    pub fn assignment(&self, m: &ModelIR, x: &Point) -> Assignment {
        m.variables
            .iter()
            .zip(x)
            .map(|(v, vals)| (v.name.clone(), Tensor::from_shape(v.dims.clone(), vals.clone()).unwrap()))
            .collect()
    }
}

/// Differences between the library checker and the oracle at one point.
pub fn disagreements(model: &RandomModel, m: &ModelIR, x: &Point) -> Vec<String> {
    let tol = TolerancePolicy::default();
    let report = check_assignment(m, &model.assignment(m, x), &tol, DataConsistencyVerdict::unchecked()).unwrap();
    let ours: Vec<(String, bool)> = report.per_constraint.iter().map(|c| (c.row_id.clone(), c.satisfied)).collect();
    let expected = model.oracle_rows(x, &tol);
    let (bounds, integrality) = model.oracle_columns(x);
    let mut diffs = Vec::new();
    if ours != expected {
        diffs.push(format!("rows: checker {ours:?}, oracle {expected:?}"));
    }
    if report.bound_violations.len() != bounds || report.integrality_violations.len() != integrality {
        diffs.push(format!(
            "columns: checker {}/{}, oracle {bounds}/{integrality}",
            report.bound_violations.len(),
            report.integrality_violations.len()
        ));
    }
    let feasible = expected.iter().all(|(_, ok)| *ok) && bounds == 0 && integrality == 0;
    if report.feasible != feasible {
        diffs.push(format!("verdict: checker {}, oracle {feasible}", report.feasible));
    }
    diffs
}

fn var() -> impl Strategy<Value = Var> {
    let dims = prop_oneof![Just(vec![]), Just(vec![0]), Just(vec![1]), Just(vec![0, 1])];
    let kind = prop_oneof![Just(Kind::Continuous), Just(Kind::Integer), Just(Kind::Binary)];
    (dims, kind, -2i32..=0, 1i32..=4).prop_map(|(dims, kind, lo, width)| match kind {
        Kind::Binary => Var { dims, kind, lo: 0, hi: 1 },
        _ => Var { dims, kind, lo, hi: lo + width },
    })
}

fn family(nvars: usize) -> impl Strategy<Value = Family> {
    let quant = prop_oneof![Just(None), Just(Some(0)), Just(Some(1))];
    let term = (0..nvars, -3i32..=3, any::<bool>()).prop_map(|(var, coef, weighted)| Term { var, coef, weighted });
    let rhs = prop_oneof![(-6i32..=6).prop_map(Rhs::Const), Just(Rhs::Scalar), Just(Rhs::Indexed)];
    (quant, prop::collection::vec(term, 1..=3), 0usize..3, rhs).prop_map(|(quant, terms, rel, rhs)| Family { quant, terms, rel, rhs })
}

/// At most four variables over index sets of at most three elements.
pub fn random_model() -> impl Strategy<Value = RandomModel> {
    (1usize..=3, 1usize..=3, 1usize..=4).prop_flat_map(|(a, b, nvars)| {
        (
            prop::collection::vec(-3i32..=3, a),
            prop::collection::vec(-3i32..=3, b),
            -4i32..=4,
            prop::collection::vec(var(), nvars),
            prop::collection::vec(family(nvars), 1..=3),
        )
            .prop_map(move |(w1, w2, r, vars, families)| RandomModel { sizes: [a, b], weights: [w1, w2], r, vars, families })
    })
}

/// Points on a half-integer grid one unit around each variable's bounds.
pub fn points(model: &RandomModel, count: usize) -> impl Strategy<Value = Vec<Point>> {
    let per_var: Vec<_> = model
        .vars
        .iter()
        .map(|v| prop::collection::vec((2 * (v.lo - 1))..=(2 * (v.hi + 1)), model.len(v)))
        .collect();
    prop::collection::vec(
        per_var.prop_map(|vars| vars.into_iter().map(|vals| vals.into_iter().map(|h| f64::from(h) / 2.0).collect()).collect()),
        count,
    )
}
