//! Reference backend: solves an interchange document with good_lp's pure-Rust
//! MILP solver, so external-backend runs and oracle checks need no system solver.

use std::collections::HashMap;

use engiweave::blueprint::{Sense, VarType};
use engiweave::expr::Rel;
use engiweave::interchange::{InterchangeModel, SolutionFile};
use engiweave::solution::SolveStatus;
use good_lp::{microlp, variable, Expression, ProblemVariables, ResolutionError, Solution, SolverModel, Variable};

fn linear(terms: &[(String, f64)], vars: &HashMap<&str, Variable>) -> Expression {
    terms.iter().map(|(c, k)| *k * vars[c.as_str()]).sum()
}

/// Solves `m`. Infeasible and unbounded models yield a solution file without values.
pub fn solve_interchange(m: &InterchangeModel) -> SolutionFile {
    let mut problem = ProblemVariables::new();
    let mut vars = HashMap::new();
    for (name, &(lo, hi)) in &m.bounds {
        let mut def = variable();
        match m.kind(name) {
            VarType::Binary => def = def.binary(),
            VarType::Integer => def = def.integer(),
            VarType::Continuous => {}
        }
        if lo.is_finite() {
            def = def.min(lo);
        }
        if hi.is_finite() {
            def = def.max(hi);
        }
        vars.insert(name.as_str(), problem.add(def));
    }
    let objective = linear(&m.objective, &vars);
    let unsolved = match m.sense {
        Sense::Minimize => problem.minimise(objective),
        Sense::Maximize => problem.maximise(objective),
    };
    let mut model = unsolved.using(microlp);
    for row in &m.rows {
        let lhs = linear(&row.terms, &vars);
        model = model.with(match row.rel {
            Rel::Le => lhs.leq(row.rhs),
            Rel::Ge => lhs.geq(row.rhs),
            Rel::Eq => lhs.eq(row.rhs),
        });
    }
    let empty = |status| SolutionFile { status, objective: None, values: Default::default() };
    match model.solve() {
        Ok(sol) => {
            let values: indexmap::IndexMap<String, f64> =
                m.bounds.keys().map(|name| (name.clone(), sol.value(vars[name.as_str()]))).collect();
            let x: HashMap<String, f64> = values.iter().map(|(k, v)| (k.clone(), *v)).collect();
            SolutionFile { status: SolveStatus::Optimal, objective: Some(m.objective_value(&x)), values }
        }
        Err(ResolutionError::Infeasible) => empty(SolveStatus::Infeasible),
        Err(ResolutionError::Unbounded) => empty(SolveStatus::Unbounded),
        Err(_) => empty(SolveStatus::Error),
    }
}
