//! Executable model representation compiled from a blueprint.

use std::collections::HashMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::blueprint::{ModelingBlueprint, Sense, VarType};
use crate::expr::{self, Ast, BinOp, Binder, Expr, IndexTerm, IndexValue, Rel, RelExpr, Span};
use crate::tensor::Tensor;

/// Variable name → values shaped like the variable's index sets.
pub type Assignment = IndexMap<String, Tensor>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub var_type: VarType,
    /// Index-set names, outermost first. Empty for scalars.
    pub shape: Vec<String>,
    pub dims: Vec<usize>,
    pub lower: f64,
    pub upper: f64,
}

impl Variable {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub param_id: String,
    pub symbol: String,
    pub value: Tensor,
    /// Index set each axis is keyed by; `None` means positional, 1-based.
    pub axes: Vec<Option<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub name: String,
    pub sense: Sense,
    pub expr: Expr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelIR {
    pub name: String,
    pub index_sets: IndexMap<String, Vec<IndexValue>>,
    pub variables: Vec<Variable>,
    /// Keyed by `param_id`.
    pub parameters: IndexMap<String, Parameter>,
    pub objective: Option<Objective>,
    pub constraints: Vec<RelExpr>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("syntax error in {location} at {span}: {message}")]
    ExpressionSyntax { location: String, span: Span, message: String },
    #[error("unresolved symbol `{name}` in {location}")]
    UnresolvedSymbol { name: String, location: String },
    #[error("dimension mismatch for `{name}` in {location}: {detail}")]
    DimensionMismatch { name: String, location: String, detail: String },
    #[error("symbol `{0}` is declared more than once")]
    DuplicateSymbol(String),
    #[error("unknown index set `{set}` in {location}")]
    UnknownIndexSet { set: String, location: String },
    #[error("cannot interpret domain `{domain}` of variable `{variable}`: {reason}")]
    InvalidDomain { variable: String, domain: String, reason: String },
    #[error("division by constant zero in {location}")]
    ZeroDivisor { location: String },
}

impl ModelError {
    pub fn label(&self) -> &'static str {
        match self {
            Self::ExpressionSyntax { .. } => "ExpressionSyntax",
            Self::UnresolvedSymbol { .. } => "UnresolvedSymbol",
            Self::DimensionMismatch { .. } => "DimensionMismatch",
            Self::DuplicateSymbol(_) => "DuplicateSymbol",
            Self::UnknownIndexSet { .. } => "UnknownIndexSet",
            Self::InvalidDomain { .. } => "InvalidDomain",
            Self::ZeroDivisor { .. } => "DivisionByZero",
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("division by zero in `{0}`")]
    DivisionByZero(String),
    #[error("index out of range: `{name}` at [{index}]")]
    IndexOutOfRange { name: String, index: String },
    #[error("no value for variable `{0}`")]
    MissingVariable(String),
    #[error("value of `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("unbound index `{0}`")]
    UnboundIndex(String),
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
}

impl ModelIR {
    pub fn variable(&self, name: &str) -> Option<&Variable> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn parameter_by_symbol(&self, symbol: &str) -> Option<&Parameter> {
        self.parameters.values().find(|p| p.symbol == symbol)
    }

    /// Parameter values keyed by `param_id`, as a solver reports them.
    pub fn parameter_snapshot(&self) -> IndexMap<String, Tensor> {
        self.parameters.iter().map(|(k, p)| (k.clone(), p.value.clone())).collect()
    }

    fn set_values(&self, set: &str) -> Result<&[IndexValue], EvalError> {
        self.index_sets
            .get(set)
            .map(Vec::as_slice)
            .ok_or_else(|| EvalError::UnknownSymbol(set.to_string()))
    }

    /// All index tuples of a binder list, in lexicographic set order.
    pub fn binder_tuples(&self, binders: &[Binder]) -> Result<Vec<Vec<IndexValue>>, EvalError> {
        let mut out = vec![Vec::new()];
        for b in binders {
            let values = self.set_values(&b.set)?;
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    values.iter().map(move |v| {
                        let mut t = prefix.clone();
                        t.push(v.clone());
                        t
                    })
                })
                .collect();
        }
        Ok(out)
    }

    /// Index tuples of a variable's elements in row-major order.
    pub fn variable_tuples(&self, var: &Variable) -> Vec<Vec<IndexValue>> {
        let binders: Vec<Binder> =
            var.shape.iter().map(|s| Binder { name: String::new(), set: s.clone() }).collect();
        self.binder_tuples(&binders).unwrap_or_default()
    }

    /// Row-major offset of `values` within a variable.
    pub fn variable_offset(&self, var: &Variable, values: &[IndexValue]) -> Result<usize, EvalError> {
        let mut off = 0;
        for ((set, dim), value) in var.shape.iter().zip(&var.dims).zip(values) {
            let pos = self.set_values(set)?.iter().position(|v| v == value).ok_or_else(|| {
                EvalError::IndexOutOfRange { name: var.name.clone(), index: join(values) }
            })?;
            off = off * dim + pos;
        }
        Ok(off)
    }

    fn parameter_offset(&self, p: &Parameter, values: &[IndexValue]) -> Result<usize, EvalError> {
        let out_of_range = || EvalError::IndexOutOfRange { name: p.symbol.clone(), index: join(values) };
        let mut pos = Vec::with_capacity(values.len());
        for (axis, value) in p.axes.iter().zip(values) {
            let i = match (axis, value) {
                (Some(set), v) => self.set_values(set)?.iter().position(|x| x == v),
                (None, IndexValue::Int(i)) if *i >= 1 => Some(*i as usize - 1),
                _ => None,
            };
            pos.push(i.ok_or_else(out_of_range)?);
        }
        p.value.offset(&pos).ok_or_else(out_of_range)
    }

    /// Renders a row id like `CONST_03[2]`.
    pub fn row_id(id: &str, tuple: &[IndexValue]) -> String {
        if tuple.is_empty() {
            id.to_string()
        } else {
            format!("{id}[{}]", join(tuple))
        }
    }

    /// Column name like `n_i[2]` or `K`.
    pub fn column_name(var: &str, tuple: &[IndexValue]) -> String {
        Self::row_id(var, tuple)
    }
}

pub(crate) fn join(values: &[IndexValue]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Index bindings in scope during evaluation.
pub type Env = Vec<(String, IndexValue)>;

pub(crate) fn resolve_terms(terms: &[IndexTerm], env: &Env) -> Result<Vec<IndexValue>, EvalError> {
    terms
        .iter()
        .map(|t| match t {
            IndexTerm::Literal(v) => Ok(v.clone()),
            IndexTerm::Binder { name, offset } => {
                let v = env
                    .iter()
                    .rev()
                    .find(|(n, _)| n == name)
                    .map(|(_, v)| v)
                    .ok_or_else(|| EvalError::UnboundIndex(name.clone()))?;
                match (v, offset) {
                    (v, 0) => Ok(v.clone()),
                    (IndexValue::Int(i), d) => Ok(IndexValue::Int(i + d)),
                    (IndexValue::Label(_), _) => Err(EvalError::UnboundIndex(format!("{name}{offset:+}"))),
                }
            }
        })
        .collect()
}

/// Value of a parameter element under the given bindings.
pub fn param_value(m: &ModelIR, id: &str, index: &[IndexTerm], env: &Env) -> Result<f64, EvalError> {
    let p = m.parameters.get(id).ok_or_else(|| EvalError::UnknownSymbol(id.to_string()))?;
    let values = resolve_terms(index, env)?;
    Ok(p.value.data()[m.parameter_offset(p, &values)?])
}

/// Evaluates `e` with no index bindings in scope.
pub fn eval_expression(e: &Expr, a: &Assignment, m: &ModelIR) -> Result<f64, EvalError> {
    eval_in(e, a, m, &mut Vec::new())
}

pub fn eval_in(e: &Expr, a: &Assignment, m: &ModelIR, env: &mut Env) -> Result<f64, EvalError> {
    match e {
        Expr::Const(v) => Ok(*v),
        Expr::Param { id, index } => param_value(m, id, index, env),
        Expr::Var { name, index } => {
            let var = m.variable(name).ok_or_else(|| EvalError::UnknownSymbol(name.clone()))?;
            let value = a.get(name).ok_or_else(|| EvalError::MissingVariable(name.clone()))?;
            if value.shape() != var.dims.as_slice() {
                return Err(EvalError::ShapeMismatch {
                    name: name.clone(),
                    expected: var.dims.clone(),
                    found: value.shape().to_vec(),
                });
            }
            let values = resolve_terms(index, env)?;
            Ok(value.data()[m.variable_offset(var, &values)?])
        }
        Expr::Neg(inner) => Ok(-eval_in(inner, a, m, env)?),
        Expr::Binary { op, lhs, rhs } => {
            let l = eval_in(lhs, a, m, env)?;
            let r = eval_in(rhs, a, m, env)?;
            Ok(match op {
                BinOp::Add => l + r,
                BinOp::Sub => l - r,
                BinOp::Mul => l * r,
                BinOp::Div => {
                    if r == 0.0 {
                        return Err(EvalError::DivisionByZero(e.to_string()));
                    }
                    l / r
                }
            })
        }
        Expr::Sum { binders, body } => {
            let mut total = 0.0;
            for tuple in m.binder_tuples(binders)? {
                let depth = env.len();
                env.extend(binders.iter().map(|b| b.name.clone()).zip(tuple));
                let v = eval_in(body, a, m, env);
                env.truncate(depth);
                total += v?;
            }
            Ok(total)
        }
    }
}

/// One expanded row of a constraint family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub row_id: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs` for `<=`, `lhs - rhs` for `>=`, `|lhs - rhs|` for `==`.
    pub slack: f64,
}

pub fn slack(rel: Rel, lhs: f64, rhs: f64) -> f64 {
    match rel {
        Rel::Le => rhs - lhs,
        Rel::Ge => lhs - rhs,
        Rel::Eq => (lhs - rhs).abs(),
    }
}

/// Residuals of every row of a (possibly indexed) constraint.
pub fn constraint_residual(c: &RelExpr, a: &Assignment, m: &ModelIR) -> Result<Vec<Residual>, EvalError> {
    let mut out = Vec::new();
    for tuple in m.binder_tuples(&c.over)? {
        let mut env: Env = c.over.iter().map(|b| b.name.clone()).zip(tuple.iter().cloned()).collect();
        let lhs = eval_in(&c.lhs, a, m, &mut env)?;
        let rhs = eval_in(&c.rhs, a, m, &mut env)?;
        out.push(Residual { row_id: ModelIR::row_id(&c.id, &tuple), lhs, rhs, slack: slack(c.rel, lhs, rhs) });
    }
    Ok(out)
}

/// Assignment with every variable at zero, shaped to the model.
pub fn zero_assignment(m: &ModelIR) -> Assignment {
    m.variables.iter().map(|v| (v.name.clone(), Tensor::zeros(v.dims.clone()))).collect()
}

// ---------------------------------------------------------------------------
// Compilation
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
enum Symbol<'a> {
    Param(&'a str),
    Var(usize),
}

struct Compiler<'a> {
    symbols: HashMap<&'a str, Symbol<'a>>,
    params: IndexMap<String, Parameter>,
    var_shapes: Vec<Vec<String>>,
    sets: IndexMap<String, Vec<IndexValue>>,
}

/// Compiles a parsed blueprint into a [`ModelIR`].
///
/// Index sets not listed explicitly are inferred as `1..=n` from the size of
/// the parameter axis they index.
pub fn compile_blueprint(bp: &ModelingBlueprint) -> Result<ModelIR, ModelError> {
    let core = &bp.core_model_elements;
    let mut symbols = HashMap::new();
    let mut params = IndexMap::new();
    for p in &core.parameters {
        if params.contains_key(&p.param_id) {
            return Err(ModelError::DuplicateSymbol(p.param_id.clone()));
        }
        for key in [p.param_id.as_str(), p.name.as_str()] {
            if key.is_empty() {
                continue;
            }
            if let Some(Symbol::Param(other)) = symbols.insert(key, Symbol::Param(&p.param_id)) {
                if other != p.param_id {
                    return Err(ModelError::DuplicateSymbol(key.to_string()));
                }
            }
        }
        params.insert(
            p.param_id.clone(),
            Parameter {
                param_id: p.param_id.clone(),
                symbol: p.name.clone(),
                value: p.value.clone(),
                axes: vec![None; p.value.rank()],
            },
        );
    }
    for (i, v) in core.decision_variables.iter().enumerate() {
        if symbols.insert(v.name.as_str(), Symbol::Var(i)).is_some() {
            return Err(ModelError::DuplicateSymbol(v.name.clone()));
        }
    }
    let mut c = Compiler {
        symbols,
        params,
        var_shapes: core.decision_variables.iter().map(|v| v.shape.clone()).collect(),
        sets: core.index_sets.clone(),
    };

    let syntax = |location: &str| {
        let location = location.to_string();
        move |e: expr::SyntaxError| ModelError::ExpressionSyntax { location, span: e.span, message: e.message }
    };
    let objective_ast = if core.objective_function.expression.trim().is_empty() {
        None
    } else {
        Some(expr::parse_expression(&core.objective_function.expression).map_err(syntax("objective"))?)
    };
    let mut relations = Vec::new();
    for decl in &core.constraints {
        relations.push(expr::parse_relation(&decl.expression).map_err(syntax(&decl.constraint_id))?);
    }

    // Infer set sizes from parameter axes before resolving anything.
    if let Some(ast) = &objective_ast {
        c.infer_sets(ast, &mut Vec::new(), "objective")?;
    }
    for (decl, rel) in core.constraints.iter().zip(&relations) {
        let mut scope = rel.over.clone();
        c.infer_sets(&rel.lhs, &mut scope, &decl.constraint_id)?;
        c.infer_sets(&rel.rhs, &mut scope, &decl.constraint_id)?;
    }

    let mut variables = Vec::new();
    for v in &core.decision_variables {
        let dims = v
            .shape
            .iter()
            .map(|s| {
                c.sets.get(s).map(Vec::len).ok_or_else(|| ModelError::UnknownIndexSet {
                    set: s.clone(),
                    location: format!("shape of `{}`", v.name),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        variables.push(Variable {
            name: v.name.clone(),
            var_type: v.var_type,
            shape: v.shape.clone(),
            dims,
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        });
    }

    let objective = match objective_ast {
        None => None,
        Some(ast) => Some(Objective {
            name: core.objective_function.name.clone(),
            sense: core.objective_function.sense,
            expr: c.resolve(&ast, &mut Vec::new(), "objective")?,
        }),
    };
    let mut constraints = Vec::new();
    for (decl, rel) in core.constraints.iter().zip(relations) {
        let loc = decl.constraint_id.as_str();
        for b in &rel.over {
            c.require_set(&b.set, loc)?;
        }
        let mut scope = rel.over.clone();
        constraints.push(RelExpr {
            id: decl.constraint_id.clone(),
            lhs: c.resolve(&rel.lhs, &mut scope, loc)?,
            rel: rel.rel,
            rhs: c.resolve(&rel.rhs, &mut scope, loc)?,
            over: rel.over,
            category: decl.category,
        });
    }

    let mut model = ModelIR {
        name: model_name(&core.objective_function.name, &bp.modeling_context.problem_essence),
        index_sets: c.sets,
        variables,
        parameters: c.params,
        objective,
        constraints,
    };
    for (var, decl) in model.variables.iter_mut().zip(&core.decision_variables) {
        let (lo, hi) = parse_domain(&decl.domain, var.var_type, &model.parameters).map_err(|reason| {
            ModelError::InvalidDomain { variable: decl.name.clone(), domain: decl.domain.clone(), reason }
        })?;
        var.lower = lo;
        var.upper = hi;
    }
    Ok(model)
}

fn model_name(objective: &str, essence: &str) -> String {
    let source = if objective.trim().is_empty() { essence } else { objective };
    let name: String = source
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { '_' })
        .collect::<String>()
        .split('_')
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("_");
    if name.is_empty() {
        "model".into()
    } else {
        name
    }
}

impl<'a> Compiler<'a> {
    fn require_set(&self, set: &str, location: &str) -> Result<(), ModelError> {
        if self.sets.contains_key(set) {
            Ok(())
        } else {
            Err(ModelError::UnknownIndexSet { set: set.to_string(), location: location.to_string() })
        }
    }

    fn infer_sets(&mut self, ast: &Ast, scope: &mut Vec<Binder>, location: &str) -> Result<(), ModelError> {
        match ast {
            Ast::Num(..) => Ok(()),
            Ast::Neg(e, _) => self.infer_sets(e, scope, location),
            Ast::Bin(_, l, r) => {
                self.infer_sets(l, scope, location)?;
                self.infer_sets(r, scope, location)
            }
            Ast::Sum { binders, body, .. } => {
                let depth = scope.len();
                scope.extend(binders.iter().cloned());
                let r = self.infer_sets(body, scope, location);
                scope.truncate(depth);
                r
            }
            Ast::Ref { name, index: Some(index), .. } => {
                let Some(Symbol::Param(id)) = self.symbols.get(name.as_str()).copied() else {
                    return Ok(());
                };
                let shape = self.params[id].value.shape().to_vec();
                for (axis, term) in index.iter().enumerate() {
                    let (Some(&dim), IndexTerm::Binder { name: b, offset: 0 }) = (shape.get(axis), term) else {
                        continue;
                    };
                    let Some(binder) = scope.iter().rev().find(|x| &x.name == b) else { continue };
                    if !self.sets.contains_key(&binder.set) {
                        let values = (1..=dim as i64).map(IndexValue::Int).collect();
                        self.sets.insert(binder.set.clone(), values);
                    }
                }
                Ok(())
            }
            Ast::Ref { .. } => Ok(()),
        }
    }

    fn resolve(&mut self, ast: &Ast, scope: &mut Vec<Binder>, location: &str) -> Result<Expr, ModelError> {
        Ok(match ast {
            Ast::Num(v, _) => Expr::Const(*v),
            Ast::Neg(e, _) => Expr::Neg(Box::new(self.resolve(e, scope, location)?)),
            Ast::Bin(op, l, r) => {
                if *op == BinOp::Div && matches!(**r, Ast::Num(v, _) if v == 0.0) {
                    return Err(ModelError::ZeroDivisor { location: location.to_string() });
                }
                Expr::binary(*op, self.resolve(l, scope, location)?, self.resolve(r, scope, location)?)
            }
            Ast::Sum { binders, body, .. } => {
                for b in binders {
                    self.require_set(&b.set, location)?;
                }
                let depth = scope.len();
                scope.extend(binders.iter().cloned());
                let body = self.resolve(body, scope, location);
                scope.truncate(depth);
                Expr::Sum { binders: binders.clone(), body: Box::new(body?) }
            }
            Ast::Ref { name, index, .. } => {
                let terms = index.clone().unwrap_or_default();
                for t in &terms {
                    if let IndexTerm::Binder { name: b, .. } = t {
                        if !scope.iter().any(|x| &x.name == b) {
                            return Err(ModelError::UnresolvedSymbol {
                                name: b.clone(),
                                location: location.to_string(),
                            });
                        }
                    }
                }
                let mismatch = |expected: usize| ModelError::DimensionMismatch {
                    name: name.clone(),
                    location: location.to_string(),
                    detail: format!("referenced with {} index(es), declared with {expected}", terms.len()),
                };
                match self.symbols.get(name.as_str()).copied() {
                    None => {
                        return Err(ModelError::UnresolvedSymbol {
                            name: name.clone(),
                            location: location.to_string(),
                        })
                    }
                    Some(Symbol::Var(i)) => {
                        if self.var_shapes[i].len() != terms.len() {
                            return Err(mismatch(self.var_shapes[i].len()));
                        }
                        Expr::Var { name: name.clone(), index: terms }
                    }
                    Some(Symbol::Param(id)) => {
                        let param = &self.params[id];
                        // A scalar may be written with a trailing `[1]`-style index only if rank matches.
                        if param.value.rank() != terms.len() {
                            return Err(mismatch(param.value.rank()));
                        }
                        let shape = param.value.shape().to_vec();
                        let id = id.to_string();
                        for (axis, term) in terms.iter().enumerate() {
                            let IndexTerm::Binder { name: b, offset } = term else { continue };
                            let set = &scope.iter().rev().find(|x| &x.name == b).expect("checked above").set;
                            let len = self.sets[set].len();
                            let param = &mut self.params[&id];
                            if *offset == 0 && len != shape[axis] {
                                return Err(ModelError::DimensionMismatch {
                                    name: name.clone(),
                                    location: location.to_string(),
                                    detail: format!(
                                        "axis {} has {} entries but set `{set}` has {len}",
                                        axis + 1,
                                        shape[axis]
                                    ),
                                });
                            }
                            if *offset == 0 && param.axes[axis].is_none() {
                                param.axes[axis] = Some(set.clone());
                            }
                        }
                        Expr::Param { id, index: terms }
                    }
                }
            }
        })
    }
}

// ---------------------------------------------------------------------------
// Domains
// ---------------------------------------------------------------------------

/// Turns a domain string into numeric bounds.
///
/// Accepted forms: `>= a`, `<= b`, `[a, b]`, `a <= x <= b`, `{0,1}`,
/// `binary`, `non-negative`, `free`, and conjunctions joined by `,`/`and`.
/// Bound values may use scalar parameters.
pub fn parse_domain(
    text: &str,
    var_type: VarType,
    params: &IndexMap<String, Parameter>,
) -> Result<(f64, f64), String> {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    let t = text.trim();
    let lower = t.to_ascii_lowercase().replace([' ', '-', '_'], "");
    match lower.as_str() {
        "" | "free" | "real" | "reals" | "r" | "continuous" | "integer" | "integers" | "z" => {}
        "binary" | "{0,1}" | "boolean" => {
            lo = 0.0;
            hi = 1.0;
        }
        "nonnegative" | "nonnegativereals" | "nonnegativeintegers" | "z>=0" | "r>=0" | "r+" | "z+" | "positive" => {
            lo = 0.0;
        }
        _ if t.starts_with('[') && t.ends_with(']') => {
            let inner = &t[1..t.len() - 1];
            let (a, b) = inner.split_once(',').ok_or("interval needs two bounds")?;
            lo = bound_value(a, params)?;
            hi = bound_value(b, params)?;
        }
        _ => {
            for clause in t.split(" and ").flat_map(|c| c.split([',', '&'])) {
                let clause = clause.trim();
                if clause.is_empty() {
                    continue;
                }
                apply_clause(clause, params, &mut lo, &mut hi)?;
            }
        }
    }
    if var_type == VarType::Binary {
        lo = lo.max(0.0);
        hi = hi.min(1.0);
    }
    if lo.is_nan() || hi.is_nan() {
        return Err("bound evaluates to NaN".into());
    }
    Ok((lo, hi))
}

fn apply_clause(
    clause: &str,
    params: &IndexMap<String, Parameter>,
    lo: &mut f64,
    hi: &mut f64,
) -> Result<(), String> {
    let normalized = clause.replace('≥', ">=").replace('≤', "<=");
    let mut parts: Vec<&str> = Vec::new();
    let mut ops: Vec<Rel> = Vec::new();
    let mut rest = normalized.as_str();
    while let Some(pos) = rest.find(">=").into_iter().chain(rest.find("<=")).min() {
        parts.push(&rest[..pos]);
        ops.push(if rest[pos..].starts_with(">=") { Rel::Ge } else { Rel::Le });
        rest = &rest[pos + 2..];
    }
    parts.push(rest);
    if ops.is_empty() {
        return Err(format!("no relation in `{clause}`"));
    }
    // The variable is the one part that does not evaluate (or is empty).
    let values: Vec<Option<f64>> = parts
        .iter()
        .map(|p| if p.trim().is_empty() { None } else { bound_value(p, params).ok() })
        .collect();
    let var_pos = values.iter().position(Option::is_none).ok_or("no variable position in clause")?;
    for (k, op) in ops.iter().enumerate() {
        let (left, right) = (k, k + 1);
        if left == var_pos {
            let v = values[right].ok_or("two unknown sides")?;
            match op {
                Rel::Ge => *lo = lo.max(v),
                _ => *hi = hi.min(v),
            }
        } else if right == var_pos {
            let v = values[left].ok_or("two unknown sides")?;
            match op {
                Rel::Ge => *hi = hi.min(v),
                _ => *lo = lo.max(v),
            }
        }
    }
    Ok(())
}

fn bound_value(text: &str, params: &IndexMap<String, Parameter>) -> Result<f64, String> {
    let t = text.trim();
    match t.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" | "∞" => return Ok(f64::INFINITY),
        "-inf" | "-infinity" | "-∞" => return Ok(f64::NEG_INFINITY),
        _ => {}
    }
    let ast = expr::parse_expression(t).map_err(|e| e.to_string())?;
    const_value(&ast, params)
}

fn const_value(ast: &Ast, params: &IndexMap<String, Parameter>) -> Result<f64, String> {
    match ast {
        Ast::Num(v, _) => Ok(*v),
        Ast::Neg(e, _) => Ok(-const_value(e, params)?),
        Ast::Bin(op, l, r) => {
            let (l, r) = (const_value(l, params)?, const_value(r, params)?);
            Ok(match op {
                BinOp::Add => l + r,
                BinOp::Sub => l - r,
                BinOp::Mul => l * r,
                BinOp::Div if r != 0.0 => l / r,
                BinOp::Div => return Err("division by zero".into()),
            })
        }
        Ast::Ref { name, index: None, .. } => params
            .values()
            .find(|p| &p.symbol == name || &p.param_id == name)
            .filter(|p| p.value.rank() == 0)
            .map(|p| p.value.data()[0])
            .ok_or_else(|| format!("`{name}` is not a scalar parameter")),
        _ => Err("bounds must be constant".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blueprint::parse_blueprint;
    use serde_json::{json, Value};

    fn doc(vars: Value, params: Value, objective: &str, constraints: Value) -> String {
        json!({
            "modeling_context": {"problem_essence": "t", "engineering_domain": "t",
                                  "modeling_paradigm": "t", "solution_scope": "t"},
            "core_model_elements": {
                "decision_variables": vars, "parameters": params,
                "objective_function": {"name": "Obj", "type": "minimize", "expression": objective, "components": []},
                "constraints": constraints
            },
            "extended_analysis_and_robustness": {"key_assumptions": [], "uncertainty_sources": [],
                "trade_off_analysis": {}, "sensitivity_factors": []}
        })
        .to_string()
    }

    fn compile(d: &str) -> Result<ModelIR, ModelError> {
        compile_blueprint(&parse_blueprint(d).unwrap())
    }

    fn p(id: &str, name: &str, value: Value) -> Value {
        json!({"param_id": id, "name": name, "value": value, "source_reference": "s"})
    }

    #[test]
    fn sum_over_matrix_parameter() {
        let d = doc(
            json!([{"name": "x", "type": "continuous", "domain": ">= 0", "shape": []}]),
            json!([p("P1", "p", json!([[1, 2], [3, 4]]))]),
            "sum(p[i,j] for i in I, j in J) + x",
            json!([]),
        );
        let m = compile(&d).unwrap();
        assert_eq!(m.index_sets["I"].len(), 2);
        let mut a = zero_assignment(&m);
        assert_eq!(eval_expression(&m.objective.as_ref().unwrap().expr, &a, &m).unwrap(), 10.0);
        a.insert("x".into(), Tensor::scalar(5.0));
        assert_eq!(eval_expression(&m.objective.as_ref().unwrap().expr, &a, &m).unwrap(), 15.0);
    }

    #[test]
    fn undeclared_symbol_is_unresolved() {
        let d = doc(
            json!([{"name": "x", "type": "continuous", "domain": "", "shape": []}]),
            json!([]),
            "x",
            json!([{"constraint_id": "C1", "expression": "x + q <= 1", "category": "Operational Logic"}]),
        );
        assert_eq!(
            compile(&d).unwrap_err(),
            ModelError::UnresolvedSymbol { name: "q".into(), location: "C1".into() }
        );
    }

    #[test]
    fn arity_mismatch_is_reported() {
        let d = doc(
            json!([{"name": "x", "type": "continuous", "domain": "", "shape": "[I]"}]),
            json!([p("P1", "c", json!([1, 2, 3]))]),
            "sum(c[i, i] * x[i] for i in I)",
            json!([]),
        );
        assert!(matches!(compile(&d), Err(ModelError::DimensionMismatch { name, .. }) if name == "c"));
    }

    #[test]
    fn domains_resolve_to_bounds() {
        let params: IndexMap<String, Parameter> = [(
            "P".to_string(),
            Parameter { param_id: "P".into(), symbol: "cap".into(), value: Tensor::scalar(200.0), axes: vec![] },
        )]
        .into();
        let b = |s: &str, t| parse_domain(s, t, &params).unwrap();
        assert_eq!(b(">= 0", VarType::Continuous), (0.0, f64::INFINITY));
        assert_eq!(b("[0, cap]", VarType::Continuous), (0.0, 200.0));
        assert_eq!(b("0 <= x <= 2*cap", VarType::Integer), (0.0, 400.0));
        assert_eq!(b("", VarType::Binary), (0.0, 1.0));
        assert_eq!(b("x >= -5, x <= 3", VarType::Continuous), (-5.0, 3.0));
        assert_eq!(b("non-negative", VarType::Integer), (0.0, f64::INFINITY));
        assert!(parse_domain(">= unknown", VarType::Continuous, &params).is_err());
    }

    #[test]
    fn shifted_index_outside_set_is_out_of_range() {
        let d = doc(
            json!([{"name": "x", "type": "continuous", "domain": "", "shape": "[T]"}]),
            json!([p("P1", "c", json!([1, 2]))]),
            "sum(c[t] * x[t] for t in T)",
            json!([{"constraint_id": "C1", "expression": "x[t-1] <= x[t] for t in T", "category": "Operational Logic"}]),
        );
        let m = compile(&d).unwrap();
        let err = constraint_residual(&m.constraints[0], &zero_assignment(&m), &m).unwrap_err();
        assert!(matches!(err, EvalError::IndexOutOfRange { .. }));
    }

    #[test]
    fn division_by_zero_at_runtime() {
        let d = doc(
            json!([{"name": "x", "type": "continuous", "domain": "", "shape": []}]),
            json!([]),
            "1 / x",
            json!([]),
        );
        let m = compile(&d).unwrap();
        let err = eval_expression(&m.objective.as_ref().unwrap().expr, &zero_assignment(&m), &m).unwrap_err();
        assert_eq!(err, EvalError::DivisionByZero("1 / x".into()));
    }
}
