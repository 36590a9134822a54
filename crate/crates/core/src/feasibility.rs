//! The feasible/infeasible verdict and failure classification.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::blueprint::{ConstraintCategory, ModelingBlueprint, VarType};
use crate::model::{constraint_residual, Assignment, EvalError, ModelError, ModelIR};
use crate::solution::{SolutionCandidate, SolveStatus};
use crate::tensor::Tensor;

/// Relative tolerance for parameter snapshot comparison.
pub const DATA_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TolerancePolicy {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub integrality_eps: f64,
}

impl Default for TolerancePolicy {
    fn default() -> Self {
        Self { eps_abs: 1e-6, eps_rel: 1e-6, integrality_eps: 1e-6 }
    }
}

impl TolerancePolicy {
    /// Allowed violation for a row whose sides have these magnitudes.
    pub fn allowance(&self, lhs: f64, rhs: f64) -> f64 {
        self.eps_abs + self.eps_rel * lhs.abs().max(rhs.abs())
    }

    pub fn is_valid(&self) -> bool {
        [self.eps_abs, self.eps_rel, self.integrality_eps].iter().all(|e| *e >= 0.0)
    }
}

fn as_flag<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u8(u8::from(*v))
}

fn from_flag<'de, D: serde::Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Flag {
        Int(u8),
        Bool(bool),
    }
    Ok(match Flag::deserialize(d)? {
        Flag::Int(v) => v != 0,
        Flag::Bool(b) => b,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub constraint_id: String,
    pub row_id: String,
    pub category: ConstraintCategory,
    pub satisfied: bool,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundViolation {
    pub column: String,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegralityViolation {
    pub column: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMismatch {
    pub param_id: String,
    pub expected: Tensor,
    /// `None` when the parameter is absent from the snapshot.
    pub found: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConsistencyVerdict {
    pub consistent: bool,
    /// False when the candidate carried no snapshot to compare.
    pub checked: bool,
    pub mismatches: Vec<DataMismatch>,
    pub warnings: Vec<String>,
}

impl DataConsistencyVerdict {
    pub fn unchecked() -> Self {
        Self { consistent: true, checked: false, mismatches: Vec::new(), warnings: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    #[serde(serialize_with = "as_flag", deserialize_with = "from_flag")]
    pub feasible: bool,
    pub per_constraint: Vec<ConstraintCheck>,
    pub bound_violations: Vec<BoundViolation>,
    pub integrality_violations: Vec<IntegralityViolation>,
    pub data_consistency: DataConsistencyVerdict,
}

impl FeasibilityReport {
    pub fn violated(&self) -> impl Iterator<Item = &ConstraintCheck> {
        self.per_constraint.iter().filter(|c| !c.satisfied)
    }

    /// Recomputes the verdict from the item lists.
    pub fn derived_feasible(&self) -> bool {
        self.per_constraint.iter().all(|c| c.satisfied)
            && self.bound_violations.is_empty()
            && self.integrality_violations.is_empty()
            && self.data_consistency.consistent
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeasibilityError {
    #[error("assignment is missing variables: {}", .0.join(", "))]
    IncompleteAssignment(Vec<String>),
    #[error("candidate has no assignment (status {0})")]
    NoPoint(SolveStatus),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Checks a candidate against declared constraints, bounds, integrality and
/// its parameter snapshot. Completeness of the model is never judged here.
pub fn check_solution(
    m: &ModelIR,
    s: &SolutionCandidate,
    tol: &TolerancePolicy,
) -> Result<FeasibilityReport, FeasibilityError> {
    let a = s.assignment.as_ref().ok_or(FeasibilityError::NoPoint(s.status))?;
    let data = if s.parameter_snapshot.is_empty() {
        DataConsistencyVerdict::unchecked()
    } else {
        data_consistency(m.parameters.values().map(|p| (p.param_id.as_str(), &p.value)), &s.parameter_snapshot)
    };
    check_assignment(m, a, tol, data)
}

/// [`check_solution`] for a bare assignment with a precomputed data verdict.
pub fn check_assignment(
    m: &ModelIR,
    a: &Assignment,
    tol: &TolerancePolicy,
    data_consistency: DataConsistencyVerdict,
) -> Result<FeasibilityReport, FeasibilityError> {
    let missing: Vec<String> =
        m.variables.iter().filter(|v| !a.contains_key(&v.name)).map(|v| v.name.clone()).collect();
    if !missing.is_empty() {
        return Err(FeasibilityError::IncompleteAssignment(missing));
    }
    for v in &m.variables {
        let t = &a[&v.name];
        if t.shape() != v.dims.as_slice() {
            return Err(EvalError::ShapeMismatch {
                name: v.name.clone(),
                expected: v.dims.clone(),
                found: t.shape().to_vec(),
            }
            .into());
        }
    }

    let mut per_constraint = Vec::new();
    for c in &m.constraints {
        match constraint_residual(c, a, m) {
            Ok(rows) => per_constraint.extend(rows.into_iter().map(|r| {
                let allowed = tol.allowance(r.lhs, r.rhs);
                let satisfied = match c.rel {
                    crate::expr::Rel::Eq => r.slack <= allowed,
                    _ => r.slack >= -allowed,
                };
                ConstraintCheck {
                    constraint_id: c.id.clone(),
                    row_id: r.row_id,
                    category: c.category,
                    satisfied,
                    lhs: r.lhs,
                    rhs: r.rhs,
                    residual: r.slack,
                    error: None,
                }
            })),
            Err(EvalError::DivisionByZero(expr)) => per_constraint.push(ConstraintCheck {
                constraint_id: c.id.clone(),
                row_id: c.id.clone(),
                category: c.category,
                satisfied: false,
                lhs: f64::NAN,
                rhs: f64::NAN,
                residual: f64::NAN,
                error: Some(format!("division by zero in `{expr}`")),
            }),
            Err(e) => return Err(e.into()),
        }
    }

    let mut bound_violations = Vec::new();
    let mut integrality_violations = Vec::new();
    for v in &m.variables {
        let values = a[&v.name].data();
        for (tuple, &x) in m.variable_tuples(v).iter().zip(values) {
            let column = ModelIR::column_name(&v.name, tuple);
            let below = x < v.lower - (tol.eps_abs + tol.eps_rel * v.lower.abs());
            let above = x > v.upper + (tol.eps_abs + tol.eps_rel * v.upper.abs());
            if x.is_nan() || below || above {
                bound_violations.push(BoundViolation { column: column.clone(), value: x, lower: v.lower, upper: v.upper });
            }
            if v.var_type != VarType::Continuous && !((x - x.round()).abs() <= tol.integrality_eps) {
                integrality_violations.push(IntegralityViolation { column, value: x });
            }
        }
    }

    let mut report = FeasibilityReport {
        feasible: false,
        per_constraint,
        bound_violations,
        integrality_violations,
        data_consistency,
    };
    report.feasible = report.derived_feasible();
    Ok(report)
}

/// Compares the blueprint's parameters with a reported snapshot.
pub fn check_data_consistency(bp: &ModelingBlueprint, snapshot: &IndexMap<String, Tensor>) -> DataConsistencyVerdict {
    data_consistency(bp.core_model_elements.parameters.iter().map(|p| (p.param_id.as_str(), &p.value)), snapshot)
}

fn data_consistency<'a>(
    expected: impl Iterator<Item = (&'a str, &'a Tensor)>,
    snapshot: &IndexMap<String, Tensor>,
) -> DataConsistencyVerdict {
    let mut mismatches = Vec::new();
    let mut known = Vec::new();
    for (id, value) in expected {
        known.push(id);
        match snapshot.get(id) {
            None => mismatches.push(DataMismatch { param_id: id.to_string(), expected: value.clone(), found: None }),
            Some(found) if !found.approx_eq(value, DATA_REL_TOL) => mismatches.push(DataMismatch {
                param_id: id.to_string(),
                expected: value.clone(),
                found: Some(found.clone()),
            }),
            Some(_) => {}
        }
    }
    let warnings = snapshot
        .keys()
        .filter(|k| !known.contains(&k.as_str()))
        .map(|k| format!("snapshot entry `{k}` is not a declared parameter"))
        .collect();
    DataConsistencyVerdict { consistent: mismatches.is_empty(), checked: true, mismatches, warnings }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorClass {
    VagueModeling,
    AlteredData,
    PhysicsViolation,
    OverConstrained,
    ExecutionFault,
    Unknown,
}

impl ErrorClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorClass::VagueModeling => "VagueModeling",
            ErrorClass::AlteredData => "AlteredData",
            ErrorClass::PhysicsViolation => "PhysicsViolation",
            ErrorClass::OverConstrained => "OverConstrained",
            ErrorClass::ExecutionFault => "ExecutionFault",
            ErrorClass::Unknown => "Unknown",
        }
    }
}

/// What is known about a failed attempt.
#[derive(Debug, Clone, Copy, Default)]
pub struct FailureEvidence<'a> {
    pub report: Option<&'a FeasibilityReport>,
    pub solver_status: Option<SolveStatus>,
    pub model: Option<&'a ModelIR>,
    pub compile_error: Option<&'a ModelError>,
    /// Whether an independent oracle found a feasible point.
    pub oracle_feasible: Option<bool>,
}

/// Maps evidence to the failure taxonomy, first match wins:
/// altered data, physics violation, over-constraint, vague modeling,
/// execution fault.
pub fn classify_failure(ev: &FailureEvidence<'_>) -> ErrorClass {
    if let Some(r) = ev.report {
        if !r.data_consistency.consistent {
            return ErrorClass::AlteredData;
        }
        if r.violated().any(|c| c.category.is_physical()) {
            return ErrorClass::PhysicsViolation;
        }
    }
    if ev.solver_status == Some(SolveStatus::Infeasible) && ev.oracle_feasible == Some(true) {
        return ErrorClass::OverConstrained;
    }
    let unresolvable = matches!(
        ev.compile_error,
        Some(ModelError::UnresolvedSymbol { .. } | ModelError::ExpressionSyntax { .. } | ModelError::UnknownIndexSet { .. })
    );
    let hollow = ev.model.is_some_and(|m| m.objective.is_none() || m.constraints.is_empty());
    if unresolvable || hollow {
        return ErrorClass::VagueModeling;
    }
    if matches!(ev.solver_status, Some(SolveStatus::Error | SolveStatus::Timeout)) {
        return ErrorClass::ExecutionFault;
    }
    ErrorClass::Unknown
}
