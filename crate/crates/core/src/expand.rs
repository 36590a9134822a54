//! Scalar expansion: every variable element becomes a column and every
//! constraint-family instance becomes a row over those columns.

use std::fmt::Write as _;

use crate::blueprint::{ConstraintCategory, Sense, VarType};
use crate::expr::{BinOp, Expr, Rel};
use crate::model::{param_value, resolve_terms, Assignment, Env, EvalError, ModelIR};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub var: usize,
    pub offset: usize,
    pub var_type: VarType,
    pub lower: f64,
    pub upper: f64,
}

/// Expression over columns with all parameters and sums substituted.
#[derive(Debug, Clone, PartialEq)]
pub enum Scalar {
    Const(f64),
    Col(usize),
    Neg(Box<Scalar>),
    Bin(BinOp, Box<Scalar>, Box<Scalar>),
    Sum(Vec<Scalar>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub id: String,
    /// Position of the originating constraint in `ModelIR::constraints`.
    pub constraint: usize,
    pub category: ConstraintCategory,
    pub lhs: Scalar,
    pub rel: Rel,
    pub rhs: Scalar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expanded {
    pub columns: Vec<Column>,
    pub rows: Vec<Row>,
    pub objective: Option<(Sense, Scalar)>,
    /// First column of each variable.
    pub var_start: Vec<usize>,
}

impl Expanded {
    pub fn column_values(&self, m: &ModelIR, a: &Assignment) -> Result<Vec<f64>, EvalError> {
        let mut x = Vec::with_capacity(self.columns.len());
        for v in &m.variables {
            let t = a.get(&v.name).ok_or_else(|| EvalError::MissingVariable(v.name.clone()))?;
            if t.shape() != v.dims.as_slice() {
                return Err(EvalError::ShapeMismatch {
                    name: v.name.clone(),
                    expected: v.dims.clone(),
                    found: t.shape().to_vec(),
                });
            }
            x.extend_from_slice(t.data());
        }
        Ok(x)
    }

    pub fn assignment(&self, m: &ModelIR, x: &[f64]) -> Assignment {
        m.variables
            .iter()
            .zip(&self.var_start)
            .map(|(v, &start)| {
                let t = Tensor::from_shape(v.dims.clone(), x[start..start + v.len()].to_vec())
                    .expect("column count matches variable size");
                (v.name.clone(), t)
            })
            .collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

/// Expands every constraint family and the objective.
pub fn expand(m: &ModelIR) -> Result<Expanded, EvalError> {
    let mut columns = Vec::new();
    let mut var_start = Vec::new();
    for (vi, v) in m.variables.iter().enumerate() {
        var_start.push(columns.len());
        for (offset, tuple) in m.variable_tuples(v).into_iter().enumerate() {
            columns.push(Column {
                name: ModelIR::column_name(&v.name, &tuple),
                var: vi,
                offset,
                var_type: v.var_type,
                lower: v.lower,
                upper: v.upper,
            });
        }
    }
    let ctx = Ctx { m, var_start: &var_start };
    let mut rows = Vec::new();
    for (ci, c) in m.constraints.iter().enumerate() {
        for tuple in m.binder_tuples(&c.over)? {
            let mut env: Env = c.over.iter().map(|b| b.name.clone()).zip(tuple.iter().cloned()).collect();
            rows.push(Row {
                id: ModelIR::row_id(&c.id, &tuple),
                constraint: ci,
                category: c.category,
                lhs: ctx.scalar(&c.lhs, &mut env)?,
                rel: c.rel,
                rhs: ctx.scalar(&c.rhs, &mut env)?,
            });
        }
    }
    let objective = match &m.objective {
        None => None,
        Some(o) => Some((o.sense, ctx.scalar(&o.expr, &mut Vec::new())?)),
    };
    Ok(Expanded { columns, rows, objective, var_start })
}

struct Ctx<'a> {
    m: &'a ModelIR,
    var_start: &'a [usize],
}

impl Ctx<'_> {
    fn scalar(&self, e: &Expr, env: &mut Env) -> Result<Scalar, EvalError> {
        Ok(match e {
            Expr::Const(v) => Scalar::Const(*v),
            Expr::Param { id, index } => Scalar::Const(param_value(self.m, id, index, env)?),
            Expr::Var { name, index } => {
                let vi = self
                    .m
                    .variables
                    .iter()
                    .position(|v| &v.name == name)
                    .ok_or_else(|| EvalError::UnknownSymbol(name.clone()))?;
                let values = resolve_terms(index, env)?;
                let off = self.m.variable_offset(&self.m.variables[vi], &values)?;
                Scalar::Col(self.var_start[vi] + off)
            }
            Expr::Neg(inner) => match self.scalar(inner, env)? {
                Scalar::Const(v) => Scalar::Const(-v),
                s => Scalar::Neg(Box::new(s)),
            },
            Expr::Binary { op, lhs, rhs } => {
                let l = self.scalar(lhs, env)?;
                let r = self.scalar(rhs, env)?;
                match (&l, &r) {
                    (Scalar::Const(a), Scalar::Const(b)) if !(*op == BinOp::Div && *b == 0.0) => {
                        Scalar::Const(apply(*op, *a, *b))
                    }
                    _ => Scalar::Bin(*op, Box::new(l), Box::new(r)),
                }
            }
            Expr::Sum { binders, body } => {
                let mut terms = Vec::new();
                for tuple in self.m.binder_tuples(binders)? {
                    let depth = env.len();
                    env.extend(binders.iter().map(|b| b.name.clone()).zip(tuple));
                    let t = self.scalar(body, env);
                    env.truncate(depth);
                    terms.push(t?);
                }
                Scalar::Sum(terms)
            }
        })
    }
}

fn apply(op: BinOp, a: f64, b: f64) -> f64 {
    match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => a / b,
    }
}

impl Scalar {
    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        Ok(match self {
            Scalar::Const(v) => *v,
            Scalar::Col(c) => x[*c],
            Scalar::Neg(s) => -s.eval(x)?,
            Scalar::Bin(op, l, r) => {
                let (a, b) = (l.eval(x)?, r.eval(x)?);
                if *op == BinOp::Div && b == 0.0 {
                    return Err(EvalError::DivisionByZero(format!("{a} / {b}")));
                }
                apply(*op, a, b)
            }
            Scalar::Sum(ts) => {
                let mut total = 0.0;
                for t in ts {
                    total += t.eval(x)?;
                }
                total
            }
        })
    }

    /// Interval enclosure over the box `[lo, hi]`. Division by an interval
    /// containing zero yields the whole line.
    pub fn interval(&self, lo: &[f64], hi: &[f64]) -> (f64, f64) {
        match self {
            Scalar::Const(v) => (*v, *v),
            Scalar::Col(c) => (lo[*c], hi[*c]),
            Scalar::Neg(s) => {
                let (a, b) = s.interval(lo, hi);
                (-b, -a)
            }
            Scalar::Sum(ts) => ts.iter().fold((0.0, 0.0), |(a, b), t| {
                let (c, d) = t.interval(lo, hi);
                (a + c, b + d)
            }),
            Scalar::Bin(op, l, r) => {
                let (a, b) = l.interval(lo, hi);
                let (c, d) = r.interval(lo, hi);
                match op {
                    BinOp::Add => (a + c, b + d),
                    BinOp::Sub => (a - d, b - c),
                    BinOp::Mul => hull(&[mul(a, c), mul(a, d), mul(b, c), mul(b, d)]),
                    BinOp::Div => {
                        if c <= 0.0 && d >= 0.0 {
                            (f64::NEG_INFINITY, f64::INFINITY)
                        } else {
                            hull(&[a / c, a / d, b / c, b / d])
                        }
                    }
                }
            }
        }
    }

    pub fn columns(&self, out: &mut Vec<usize>) {
        match self {
            Scalar::Const(_) => {}
            Scalar::Col(c) => out.push(*c),
            Scalar::Neg(s) => s.columns(out),
            Scalar::Bin(_, l, r) => {
                l.columns(out);
                r.columns(out);
            }
            Scalar::Sum(ts) => ts.iter().for_each(|t| t.columns(out)),
        }
    }

    pub fn render(&self, cols: &[Column]) -> String {
        let mut s = String::new();
        self.render_into(cols, &mut s);
        s
    }

    fn render_into(&self, cols: &[Column], out: &mut String) {
        match self {
            Scalar::Const(v) => {
                let _ = write!(out, "{v}");
            }
            Scalar::Col(c) => out.push_str(&cols[*c].name),
            Scalar::Neg(s) => {
                out.push_str("-(");
                s.render_into(cols, out);
                out.push(')');
            }
            Scalar::Bin(op, l, r) => {
                out.push('(');
                l.render_into(cols, out);
                let _ = write!(out, " {} ", op.symbol());
                r.render_into(cols, out);
                out.push(')');
            }
            Scalar::Sum(ts) => {
                out.push('(');
                for (i, t) in ts.iter().enumerate() {
                    if i > 0 {
                        out.push_str(" + ");
                    }
                    t.render_into(cols, out);
                }
                out.push(')');
            }
        }
    }
}

/// `0 * inf` is taken as 0 so that unbounded columns with zero
/// coefficients do not poison an enclosure.
fn mul(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

fn hull(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// `Σ coef·x[col] + constant`, terms sorted by column with no zero entries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Affine {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    fn constant(v: f64) -> Self {
        Affine { terms: Vec::new(), constant: v }
    }

    fn scale(mut self, k: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= k;
        }
        self.constant *= k;
        self.normalize()
    }

    fn add(mut self, other: Affine) -> Self {
        self.terms.extend(other.terms);
        self.constant += other.constant;
        self.normalize()
    }

    fn normalize(mut self) -> Self {
        self.terms.sort_by_key(|t| t.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for (c, k) in self.terms {
            match merged.last_mut() {
                Some(last) if last.0 == c => last.1 += k,
                _ => merged.push((c, k)),
            }
        }
        merged.retain(|t| t.1 != 0.0);
        self.terms = merged;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(c, k)| k * x[c]).sum::<f64>() + self.constant
    }

    pub fn coefficient(&self, col: usize) -> f64 {
        self.terms.binary_search_by_key(&col, |t| t.0).map_or(0.0, |i| self.terms[i].1)
    }

    /// Interval enclosure over the box `[lo, hi]`.
    pub fn interval(&self, lo: &[f64], hi: &[f64]) -> (f64, f64) {
        let mut a = self.constant;
        let mut b = self.constant;
        for &(c, k) in &self.terms {
            if k > 0.0 {
                a += k * lo[c];
                b += k * hi[c];
            } else {
                a += k * hi[c];
                b += k * lo[c];
            }
        }
        (a, b)
    }
}

/// A sub-expression that keeps a row from being affine.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{kind} `{text}`")]
pub struct NonlinearTerm {
    pub kind: &'static str,
    pub text: String,
}

/// Extracts the affine form of `s`, or names the first nonlinear term.
pub fn affine(s: &Scalar, cols: &[Column]) -> Result<Affine, NonlinearTerm> {
    Ok(match s {
        Scalar::Const(v) => Affine::constant(*v),
        Scalar::Col(c) => Affine { terms: vec![(*c, 1.0)], constant: 0.0 },
        Scalar::Neg(inner) => affine(inner, cols)?.scale(-1.0),
        Scalar::Sum(ts) => {
            let mut acc = Affine::default();
            for t in ts {
                let a = affine(t, cols)?;
                acc.terms.extend(a.terms);
                acc.constant += a.constant;
            }
            acc.normalize()
        }
        Scalar::Bin(op, l, r) => {
            let a = affine(l, cols)?;
            let b = affine(r, cols)?;
            match op {
                BinOp::Add => a.add(b),
                BinOp::Sub => a.add(b.scale(-1.0)),
                BinOp::Mul if a.terms.is_empty() => b.scale(a.constant),
                BinOp::Mul if b.terms.is_empty() => a.scale(b.constant),
                BinOp::Mul => return Err(NonlinearTerm { kind: "bilinear term", text: s.render(cols) }),
                BinOp::Div if b.terms.is_empty() && b.constant != 0.0 => a.scale(1.0 / b.constant),
                BinOp::Div => return Err(NonlinearTerm { kind: "division term", text: s.render(cols) }),
            }
        }
    })
}

/// Affine form of `lhs - rhs` for a row.
pub fn row_affine(row: &Row, cols: &[Column]) -> Result<Affine, NonlinearTerm> {
    Ok(affine(&row.lhs, cols)?.add(affine(&row.rhs, cols)?.scale(-1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cols(n: usize) -> Vec<Column> {
        (0..n)
            .map(|i| Column {
                name: format!("x{i}"),
                var: i,
                offset: 0,
                var_type: VarType::Continuous,
                lower: 0.0,
                upper: 1.0,
            })
            .collect()
    }

    #[test]
    fn affine_merges_terms() {
        let s = Scalar::Sum(vec![
            Scalar::Bin(BinOp::Mul, Box::new(Scalar::Const(2.0)), Box::new(Scalar::Col(1))),
            Scalar::Col(1),
            Scalar::Bin(BinOp::Sub, Box::new(Scalar::Const(3.0)), Box::new(Scalar::Col(0))),
        ]);
        let a = affine(&s, &cols(2)).unwrap();
        assert_eq!(a.terms, vec![(0, -1.0), (1, 3.0)]);
        assert_eq!(a.constant, 3.0);
    }

    #[test]
    fn products_of_columns_are_nonlinear() {
        let s = Scalar::Bin(BinOp::Mul, Box::new(Scalar::Col(0)), Box::new(Scalar::Col(1)));
        let err = affine(&s, &cols(2)).unwrap_err();
        assert_eq!(err.kind, "bilinear term");
        assert_eq!(err.text, "(x0 * x1)");
        let d = Scalar::Bin(BinOp::Div, Box::new(Scalar::Const(1.0)), Box::new(Scalar::Col(0)));
        assert_eq!(affine(&d, &cols(1)).unwrap_err().kind, "division term");
    }

    #[test]
    fn interval_of_product_contains_samples() {
        let s = Scalar::Bin(BinOp::Mul, Box::new(Scalar::Col(0)), Box::new(Scalar::Neg(Box::new(Scalar::Col(1)))));
        let (lo, hi) = s.interval(&[-1.0, 2.0], &[3.0, 5.0]);
        assert_eq!((lo, hi), (-15.0, 5.0));
    }
}
