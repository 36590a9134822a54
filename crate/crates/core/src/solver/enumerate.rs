//! Exhaustive enumeration over the discrete columns of a small model.
//!
//! Columns are visited in declaration order with ascending values. Rows
//! prune a subtree only when their interval enclosure shows a violation
//! larger than the checker would tolerate. Continuous columns are resolved at
//! the leaves from equalities with one unknown, then from interval rows.

use std::time::Instant;

use crate::blueprint::Sense;
use crate::expand::{affine, expand, row_affine, Affine, Column, Row, Scalar};
use crate::expr::Rel;
use crate::feasibility::{check_assignment, DataConsistencyVerdict, TolerancePolicy};
use crate::model::{slack, ModelIR};
use crate::solution::{SolutionCandidate, SolveStatus};

use super::{ResourceLimits, SolverError};

const PROVENANCE: &str = "enumeration";
const PRESOLVE_ROUNDS: usize = 32;
const TIME_CHECK_MASK: u64 = 1023;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EnumerationStats {
    pub nodes: u64,
    pub leaves: u64,
    pub limit_hit: bool,
}

/// Best feasible point by exhaustive search, under default tolerances.
pub fn solve_enumeration(m: &ModelIR, limits: &ResourceLimits) -> Result<SolutionCandidate, SolverError> {
    enumerate(m, limits, &TolerancePolicy::default()).map(|(c, _)| c)
}

pub fn enumerate(
    m: &ModelIR,
    limits: &ResourceLimits,
    tol: &TolerancePolicy,
) -> Result<(SolutionCandidate, EnumerationStats), SolverError> {
    limits.validate()?;
    let started = Instant::now();
    let ex = expand(m)?;
    let rows: Vec<Prepared> = ex.rows.iter().map(|r| Prepared::new(r, &ex.columns)).collect();
    let objective = ex.objective.as_ref().map(|(sense, s)| {
        let sign = if *sense == Sense::Minimize { 1.0 } else { -1.0 };
        (sign, s.clone(), affine(s, &ex.columns).ok())
    });

    let mut lo: Vec<f64> = ex.columns.iter().map(|c| c.lower).collect();
    let mut hi: Vec<f64> = ex.columns.iter().map(|c| c.upper).collect();
    let consistent = presolve(&rows, &ex.columns, &mut lo, &mut hi, tol);
    let finish = |status: SolveStatus, msg: &str, stats| {
        let c = SolutionCandidate::without_point(status, PROVENANCE, Some(msg.to_string()))
            .with_wall_seconds(started.elapsed().as_secs_f64());
        Ok((c, stats))
    };
    if !consistent {
        return finish(SolveStatus::Infeasible, "bounds are contradictory", EnumerationStats::default());
    }

    let discrete: Vec<usize> = (0..ex.columns.len()).filter(|&c| ex.columns[c].var_type.is_discrete()).collect();
    if let Some(&c) = discrete.iter().find(|&&c| !lo[c].is_finite() || !hi[c].is_finite()) {
        return Err(SolverError::UnsupportedStructure(format!(
            "discrete column `{}` has no finite bounds",
            ex.columns[c].name
        )));
    }
    let mut column_rows = vec![Vec::new(); ex.columns.len()];
    for (ri, r) in rows.iter().enumerate() {
        for &c in &r.cols {
            column_rows[c].push(ri);
        }
    }

    let mut search = Search {
        cols: &ex.columns,
        rows: &rows,
        column_rows: &column_rows,
        objective: objective.as_ref(),
        discrete: &discrete,
        tol,
        limits,
        started,
        x: vec![0.0; ex.columns.len()],
        lo,
        hi,
        best: None,
        stats: EnumerationStats::default(),
        stop: None,
    };
    search.dfs(0)?;

    let stats = search.stats;
    if let Some(Stop::Unbounded) = search.stop {
        return finish(SolveStatus::Unbounded, "objective is unbounded along a free column", stats);
    }
    let Some((_, x)) = search.best.take() else {
        return if stats.limit_hit {
            finish(SolveStatus::Timeout, "search limit reached before any feasible point", stats)
        } else {
            finish(SolveStatus::Infeasible, "no assignment satisfies every row", stats)
        };
    };

    let assignment = ex.assignment(m, &x);
    let value = match &ex.objective {
        Some((_, s)) => s.eval(&x)?,
        None => 0.0,
    };
    let status = if stats.limit_hit { SolveStatus::Feasible } else { SolveStatus::Optimal };
    let mut cand = SolutionCandidate::with_point(status, assignment, value, PROVENANCE)
        .with_snapshot(m.parameter_snapshot())
        .with_wall_seconds(started.elapsed().as_secs_f64());
    if stats.limit_hit {
        cand.message = Some("search limit reached; returning incumbent".into());
    }
    let report = check_assignment(m, cand.assignment.as_ref().expect("point present"), tol, DataConsistencyVerdict::unchecked())
        .map_err(|e| SolverError::UnsupportedStructure(e.to_string()))?;
    if !report.feasible {
        cand = cand.downgrade("enumerated point failed re-verification");
    }
    Ok((cand, stats))
}

struct Prepared {
    lhs: Scalar,
    rhs: Scalar,
    rel: Rel,
    /// Affine forms of lhs, rhs and lhs - rhs when the row is linear.
    sides: Option<(Affine, Affine)>,
    diff: Option<Affine>,
    cols: Vec<usize>,
}

impl Prepared {
    fn new(r: &Row, cols: &[Column]) -> Self {
        let sides = match (affine(&r.lhs, cols), affine(&r.rhs, cols)) {
            (Ok(l), Ok(rh)) => Some((l, rh)),
            _ => None,
        };
        let diff = row_affine(r, cols).ok();
        let mut used = Vec::new();
        r.lhs.columns(&mut used);
        r.rhs.columns(&mut used);
        used.sort_unstable();
        used.dedup();
        Prepared { lhs: r.lhs.clone(), rhs: r.rhs.clone(), rel: r.rel, sides, diff, cols: used }
    }

    /// True when no point in the box can satisfy this row within tolerance.
    fn excluded(&self, lo: &[f64], hi: &[f64], tol: &TolerancePolicy) -> bool {
        let ((l0, l1), (r0, r1)) = match &self.sides {
            Some((l, r)) => (l.interval(lo, hi), r.interval(lo, hi)),
            None => (self.lhs.interval(lo, hi), self.rhs.interval(lo, hi)),
        };
        let magnitude = l0.abs().max(l1.abs()).max(r0.abs()).max(r1.abs());
        if !magnitude.is_finite() {
            return false;
        }
        let (d0, d1) = match &self.diff {
            Some(d) => d.interval(lo, hi),
            None => (l0 - r1, l1 - r0),
        };
        let allowed = tol.eps_abs + tol.eps_rel * magnitude;
        match self.rel {
            Rel::Le => d0 > allowed,
            Rel::Ge => d1 < -allowed,
            Rel::Eq => d0 > allowed || d1 < -allowed,
        }
    }

    fn satisfied(&self, x: &[f64], tol: &TolerancePolicy) -> bool {
        let (Ok(l), Ok(r)) = (self.lhs.eval(x), self.rhs.eval(x)) else {
            return false;
        };
        let s = slack(self.rel, l, r);
        let allowed = tol.allowance(l, r);
        match self.rel {
            Rel::Eq => s <= allowed,
            _ => s >= -allowed,
        }
    }
}

/// Activity-based bound tightening on linear rows. Returns false when some
/// column's bounds cross.
fn presolve(rows: &[Prepared], cols: &[Column], lo: &mut [f64], hi: &mut [f64], tol: &TolerancePolicy) -> bool {
    for _ in 0..PRESOLVE_ROUNDS {
        let mut changed = false;
        for r in rows {
            let Some(d) = &r.diff else { continue };
            if matches!(r.rel, Rel::Le | Rel::Eq) {
                changed |= tighten(d, 1.0, lo, hi, tol);
            }
            if matches!(r.rel, Rel::Ge | Rel::Eq) {
                changed |= tighten(d, -1.0, lo, hi, tol);
            }
        }
        for (c, col) in cols.iter().enumerate() {
            if col.var_type.is_discrete() {
                lo[c] = (lo[c] - 1e-9).ceil();
                hi[c] = (hi[c] + 1e-9).floor();
            }
            if lo[c] > hi[c] + tol.eps_abs {
                return false;
            }
        }
        if !changed {
            break;
        }
    }
    true
}

/// Tightens bounds from `sign * (a·x + c) <= 0`.
fn tighten(a: &Affine, sign: f64, lo: &mut [f64], hi: &mut [f64], tol: &TolerancePolicy) -> bool {
    let min_term = |c: usize, k: f64, lo: &[f64], hi: &[f64]| if k > 0.0 { k * lo[c] } else { k * hi[c] };
    let mut finite = 0.0;
    let mut unbounded = 0usize;
    for &(c, k) in &a.terms {
        let t = min_term(c, sign * k, lo, hi);
        if t.is_finite() {
            finite += t;
        } else {
            unbounded += 1;
        }
    }
    let c0 = sign * a.constant;
    let mut changed = false;
    for &(c, k) in &a.terms {
        let k = sign * k;
        let own = min_term(c, k, lo, hi);
        let rest = if own.is_finite() {
            if unbounded > 0 {
                continue;
            }
            finite - own
        } else {
            if unbounded > 1 {
                continue;
            }
            finite
        };
        let room = -c0 - rest + tol.eps_abs + tol.eps_rel * (c0.abs() + rest.abs());
        let bound = room / k;
        if k > 0.0 {
            if bound < hi[c] - 1e-9 * (1.0 + bound.abs()) {
                hi[c] = bound;
                changed = true;
            }
        } else if bound > lo[c] + 1e-9 * (1.0 + bound.abs()) {
            lo[c] = bound;
            changed = true;
        }
    }
    changed
}

enum Stop {
    Limit,
    Unbounded,
}

enum Leaf {
    Point,
    Infeasible,
    Unbounded,
}

struct Search<'a> {
    cols: &'a [Column],
    rows: &'a [Prepared],
    column_rows: &'a [Vec<usize>],
    /// `(sign, scalar, affine form)`; sign is -1 for maximization.
    objective: Option<&'a (f64, Scalar, Option<Affine>)>,
    discrete: &'a [usize],
    tol: &'a TolerancePolicy,
    limits: &'a ResourceLimits,
    started: Instant,
    x: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// Sense-normalized objective and the point.
    best: Option<(f64, Vec<f64>)>,
    stats: EnumerationStats,
    stop: Option<Stop>,
}

impl Search<'_> {
    fn dfs(&mut self, depth: usize) -> Result<(), SolverError> {
        if depth == self.discrete.len() {
            return self.leaf();
        }
        let c = self.discrete[depth];
        let (saved_lo, saved_hi) = (self.lo[c], self.hi[c]);
        let mut v = saved_lo;
        while v <= saved_hi && self.stop.is_none() {
            self.stats.nodes += 1;
            if self.stats.nodes >= self.limits.max_enumeration_nodes
                || (self.stats.nodes & TIME_CHECK_MASK == 0 && self.started.elapsed() >= self.limits.wall_clock())
            {
                self.stats.limit_hit = true;
                self.stop = Some(Stop::Limit);
            }
            self.x[c] = v;
            self.lo[c] = v;
            self.hi[c] = v;
            if !self.pruned(c) {
                self.dfs(depth + 1)?;
            }
            v += 1.0;
        }
        self.lo[c] = saved_lo;
        self.hi[c] = saved_hi;
        Ok(())
    }

    fn pruned(&self, c: usize) -> bool {
        if self.column_rows[c].iter().any(|&r| self.rows[r].excluded(&self.lo, &self.hi, self.tol)) {
            return true;
        }
        match (self.objective, &self.best) {
            (Some((sign, s, aff)), Some((incumbent, _))) => {
                let (a, b) = match aff {
                    Some(aff) => aff.interval(&self.lo, &self.hi),
                    None => s.interval(&self.lo, &self.hi),
                };
                let bound = if *sign > 0.0 { a } else { -b };
                bound >= *incumbent
            }
            _ => false,
        }
    }

    fn leaf(&mut self) -> Result<(), SolverError> {
        self.stats.leaves += 1;
        match self.resolve_continuous()? {
            Leaf::Infeasible => return Ok(()),
            Leaf::Unbounded => {
                self.stop = Some(Stop::Unbounded);
                return Ok(());
            }
            Leaf::Point => {}
        }
        for (c, col) in self.cols.iter().enumerate() {
            let x = self.x[c];
            let below = x < col.lower - (self.tol.eps_abs + self.tol.eps_rel * col.lower.abs());
            let above = x > col.upper + (self.tol.eps_abs + self.tol.eps_rel * col.upper.abs());
            if x.is_nan() || below || above {
                return Ok(());
            }
        }
        if !self.rows.iter().all(|r| r.satisfied(&self.x, self.tol)) {
            return Ok(());
        }
        let value = match self.objective {
            Some((sign, s, _)) => sign * s.eval(&self.x)?,
            None => 0.0,
        };
        if self.best.as_ref().is_none_or(|(inc, _)| value < *inc) {
            self.best = Some((value, self.x.clone()));
        }
        if self.objective.is_none() {
            self.stop = Some(Stop::Limit);
        }
        Ok(())
    }

    /// Assigns every continuous column at the current discrete point.
    fn resolve_continuous(&mut self) -> Result<Leaf, SolverError> {
        let mut known: Vec<bool> = self.cols.iter().map(|c| c.var_type.is_discrete()).collect();
        if known.iter().all(|k| *k) {
            return Ok(Leaf::Point);
        }
        // Equalities with a single unknown column.
        loop {
            let mut progress = false;
            for r in self.rows.iter().filter(|r| r.rel == Rel::Eq) {
                let Some(d) = &r.diff else { continue };
                let mut unknown = d.terms.iter().filter(|(c, _)| !known[*c]);
                let (Some(&(c, k)), None) = (unknown.next(), unknown.next()) else { continue };
                let rest: f64 = d.terms.iter().filter(|t| t.0 != c).map(|&(j, kj)| kj * self.x[j]).sum::<f64>() + d.constant;
                self.x[c] = -rest / k;
                known[c] = true;
                progress = true;
            }
            if !progress {
                break;
            }
        }
        // Interval-determined columns.
        loop {
            let pending: Vec<usize> = (0..self.cols.len()).filter(|&c| !known[c]).collect();
            if pending.is_empty() {
                return Ok(Leaf::Point);
            }
            let mut progress = false;
            for c in pending {
                let Some((lower, upper)) = self.feasible_interval(c, &known)? else { continue };
                if lower > upper + self.tol.allowance(lower, upper) {
                    return Ok(Leaf::Infeasible);
                }
                let pull = match self.objective {
                    Some((sign, _, Some(aff))) => sign * aff.coefficient(c),
                    _ => 0.0,
                };
                let v = if pull > 0.0 {
                    lower
                } else if pull < 0.0 {
                    upper
                } else if lower.is_finite() {
                    lower
                } else if upper.is_finite() {
                    upper
                } else {
                    0.0
                };
                if !v.is_finite() {
                    return Ok(Leaf::Unbounded);
                }
                self.x[c] = v;
                known[c] = true;
                progress = true;
            }
            if !progress {
                let c = (0..self.cols.len()).find(|&c| !known[c]).expect("pending column");
                return Err(SolverError::UnsupportedStructure(format!(
                    "continuous column `{}` is not determined by the discrete columns",
                    self.cols[c].name
                )));
            }
        }
    }

    /// Interval for column `c` implied by its rows, or `None` while some row
    /// still has another unknown column.
    fn feasible_interval(&self, c: usize, known: &[bool]) -> Result<Option<(f64, f64)>, SolverError> {
        let col = &self.cols[c];
        let (mut lower, mut upper) = (col.lower, col.upper);
        for &ri in &self.column_rows[c] {
            let r = &self.rows[ri];
            if r.cols.iter().any(|&j| j != c && !known[j]) {
                return Ok(None);
            }
            let Some(d) = &r.diff else {
                return Err(SolverError::UnsupportedStructure(format!(
                    "continuous column `{}` appears in a nonlinear row",
                    col.name
                )));
            };
            let k = d.coefficient(c);
            if k == 0.0 {
                continue;
            }
            let rest: f64 = d.terms.iter().filter(|t| t.0 != c).map(|&(j, kj)| kj * self.x[j]).sum::<f64>() + d.constant;
            let at = -rest / k;
            let (as_upper, as_lower) = match r.rel {
                Rel::Eq => (true, true),
                Rel::Le => (k > 0.0, k < 0.0),
                Rel::Ge => (k < 0.0, k > 0.0),
            };
            if as_upper {
                upper = upper.min(at);
            }
            if as_lower {
                lower = lower.max(at);
            }
        }
        Ok(Some((lower, upper)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blueprint::blueprint_from_value;
    use crate::model::compile_blueprint;
    use serde_json::{json, Value};

    /// `vars` are `(name, type, domain)`.
    fn model(vars: &[(&str, &str, &str)], objective: Option<(&str, &str)>, rows: &[&str]) -> ModelIR {
        let decision: Vec<Value> = vars
            .iter()
            .map(|(n, t, d)| json!({"name": n, "description": "", "type": t, "domain": d, "shape": "[]"}))
            .collect();
        let constraints: Vec<Value> = rows
            .iter()
            .enumerate()
            .map(|(i, e)| json!({"constraint_id": format!("CONST_{:02}", i + 1), "name": "r", "expression": e,
                                "category": "Resource Capacity", "description": ""}))
            .collect();
        let (sense, expr) = objective.unwrap_or(("minimize", "0"));
        let doc = json!({
            "modeling_context": {"problem_essence": "t", "engineering_domain": "t", "modeling_paradigm": "MILP", "solution_scope": "t"},
            "core_model_elements": {
                "decision_variables": decision,
                "parameters": [],
                "objective_function": {"name": "Obj", "type": sense, "expression": expr, "components": []},
                "constraints": constraints
            },
            "extended_analysis_and_robustness": {"key_assumptions": [], "uncertainty_sources": [],
                "trade_off_analysis": {"secondary_objectives": [], "soft_constraints": []}, "sensitivity_factors": []}
        });
        compile_blueprint(&blueprint_from_value(&doc).unwrap()).unwrap()
    }

    #[test]
    fn maximizes_single_integer() {
        let m = model(&[("x", "integer", "[0, 3]")], Some(("maximize", "x")), &[]);
        let c = solve_enumeration(&m, &ResourceLimits::default()).unwrap();
        assert_eq!(c.status, SolveStatus::Optimal);
        assert_eq!(c.objective_value, Some(3.0));
        assert_eq!(c.assignment.unwrap()["x"].data(), &[3.0]);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let m = model(&[("x", "integer", "[0, 10]")], None, &["x >= 5", "x <= 2"]);
        let c = solve_enumeration(&m, &ResourceLimits::default()).unwrap();
        assert_eq!(c.status, SolveStatus::Infeasible);
        assert!(c.assignment.is_none());
    }

    #[test]
    fn unbounded_integer_is_unsupported() {
        let m = model(&[("x", "integer", ">= 0")], Some(("minimize", "x")), &[]);
        let err = solve_enumeration(&m, &ResourceLimits::default()).unwrap_err();
        assert_eq!(err.label(), "UnsupportedStructure");
    }

    #[test]
    fn continuous_pushed_to_infinity_is_unbounded() {
        let m = model(&[("x", "binary", "{0,1}"), ("y", "continuous", ">= 0")], Some(("maximize", "y")), &["y >= x"]);
        let c = solve_enumeration(&m, &ResourceLimits::default()).unwrap();
        assert_eq!(c.status, SolveStatus::Unbounded);
    }

    #[test]
    fn continuous_resolved_from_equality_and_interval() {
        let m = model(
            &[("x", "integer", "[0, 4]"), ("k", "continuous", ">= 0"), ("e", "continuous", ">= 0")],
            Some(("minimize", "x")),
            &["k == 2 * x", "e >= 5", "e <= 3 * k"],
        );
        let c = solve_enumeration(&m, &ResourceLimits::default()).unwrap();
        assert_eq!(c.status, SolveStatus::Optimal);
        let a = c.assignment.unwrap();
        assert_eq!(a["x"].data(), &[1.0]);
        assert_eq!(a["k"].data(), &[2.0]);
        assert_eq!(a["e"].data(), &[5.0]);
    }

    #[test]
    fn node_limit_returns_incumbent_as_feasible() {
        let m = model(&[("x", "integer", "[0, 50]"), ("y", "integer", "[0, 50]")], Some(("maximize", "x + y")), &[]);
        let limits = ResourceLimits { max_enumeration_nodes: 10, ..ResourceLimits::default() };
        let (c, stats) = enumerate(&m, &limits, &TolerancePolicy::default()).unwrap();
        assert_eq!(c.status, SolveStatus::Feasible);
        assert!(stats.limit_hit);
        assert!(stats.nodes <= 10);
    }
}
