//! Line-oriented interchange format for affine models and the matching
//! solution-file format spoken by external solver backends.
//!
//! ```text
//! MODEL <name>
//! OBJECTIVE <min|max>
//! <coeff> <column>
//! CONST <value>
//! ROWS
//! <row-id> <le|ge|eq> <rhs>: <coeff> <column> + <coeff> <column>
//! BOUNDS
//! <column> <lo> <hi>
//! INTEGER
//! <column>
//! BINARY
//! <column>
//! END
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;

use indexmap::IndexMap;

use crate::blueprint::{Sense, VarType};
use crate::expand::{affine, expand, row_affine, NonlinearTerm};
use crate::expr::Rel;
use crate::model::{EvalError, ModelIR};
use crate::solution::SolveStatus;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmitError {
    #[error("model is not affine in row {location}: {term}")]
    NonlinearModel { location: String, term: NonlinearTerm },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct InterchangeError {
    pub line: usize,
    pub message: String,
}

fn num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

fn parse_num(s: &str) -> Option<f64> {
    match s {
        "inf" | "+inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok().filter(|v: &f64| !v.is_nan()),
    }
}

/// Writes the interchange document for an affine model.
pub fn emit_interchange(m: &ModelIR) -> Result<String, EmitError> {
    let ex = expand(m)?;
    let cols = &ex.columns;
    let mut out = String::new();
    let _ = writeln!(out, "MODEL {}", m.name);
    let (sense, objective) = match &ex.objective {
        Some((sense, s)) => (
            *sense,
            affine(s, cols).map_err(|term| EmitError::NonlinearModel { location: "objective".into(), term })?,
        ),
        None => (Sense::Minimize, Default::default()),
    };
    let _ = writeln!(out, "OBJECTIVE {}", if sense == Sense::Minimize { "min" } else { "max" });
    for (c, k) in &objective.terms {
        let _ = writeln!(out, "{} {}", num(*k), cols[*c].name);
    }
    let _ = writeln!(out, "CONST {}", num(objective.constant));
    out.push_str("ROWS\n");
    for row in &ex.rows {
        let a = row_affine(row, cols)
            .map_err(|term| EmitError::NonlinearModel { location: row.id.clone(), term })?;
        let terms: Vec<String> = a.terms.iter().map(|(c, k)| format!("{} {}", num(*k), cols[*c].name)).collect();
        let _ = writeln!(out, "{} {} {}: {}", row.id, row.rel.keyword(), num(-a.constant), terms.join(" + "));
    }
    out.push_str("BOUNDS\n");
    for c in cols {
        let _ = writeln!(out, "{} {} {}", c.name, num(c.lower), num(c.upper));
    }
    out.push_str("INTEGER\n");
    for c in cols.iter().filter(|c| c.var_type == VarType::Integer) {
        let _ = writeln!(out, "{}", c.name);
    }
    out.push_str("BINARY\n");
    for c in cols.iter().filter(|c| c.var_type == VarType::Binary) {
        let _ = writeln!(out, "{}", c.name);
    }
    out.push_str("END\n");
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterchangeRow {
    pub id: String,
    pub rel: Rel,
    pub rhs: f64,
    pub terms: Vec<(String, f64)>,
}

/// A parsed interchange document.
#[derive(Debug, Clone, PartialEq)]
pub struct InterchangeModel {
    pub name: String,
    pub sense: Sense,
    pub objective: Vec<(String, f64)>,
    pub objective_constant: f64,
    pub rows: Vec<InterchangeRow>,
    /// Every column with its bounds, in document order.
    pub bounds: IndexMap<String, (f64, f64)>,
    pub integer: Vec<String>,
    pub binary: Vec<String>,
}

impl InterchangeModel {
    pub fn kind(&self, column: &str) -> VarType {
        if self.binary.iter().any(|c| c == column) {
            VarType::Binary
        } else if self.integer.iter().any(|c| c == column) {
            VarType::Integer
        } else {
            VarType::Continuous
        }
    }

    pub fn objective_value(&self, x: &HashMap<String, f64>) -> f64 {
        self.objective_constant + self.objective.iter().map(|(c, k)| k * x.get(c).copied().unwrap_or(0.0)).sum::<f64>()
    }

    /// `activity - rhs` of a row at `x`.
    pub fn row_gap(&self, row: &InterchangeRow, x: &HashMap<String, f64>) -> f64 {
        row.terms.iter().map(|(c, k)| k * x.get(c).copied().unwrap_or(0.0)).sum::<f64>() - row.rhs
    }
}

#[derive(PartialEq, Clone, Copy)]
enum Section {
    Header,
    Named,
    Objective,
    Rows,
    Bounds,
    Integer,
    Binary,
    Done,
}

/// Reads an interchange document.
pub fn parse_interchange(text: &str) -> Result<InterchangeModel, InterchangeError> {
    let mut model = InterchangeModel {
        name: String::new(),
        sense: Sense::Minimize,
        objective: Vec::new(),
        objective_constant: 0.0,
        rows: Vec::new(),
        bounds: IndexMap::new(),
        integer: Vec::new(),
        binary: Vec::new(),
    };
    let mut section = Section::Header;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let n = i + 1;
        let err = |message: String| InterchangeError { line: n, message };
        if line.is_empty() {
            continue;
        }
        if section == Section::Done {
            return Err(err("content after END".into()));
        }
        let mut words = line.split_whitespace();
        let head = words.next().unwrap_or_default();
        match (section, head) {
            (Section::Header, "MODEL") => {
                model.name = line["MODEL".len()..].trim().to_string();
                section = Section::Named;
                continue;
            }
            (Section::Header, _) => return Err(err("expected `MODEL <name>`".into())),
            (_, "OBJECTIVE") => {
                model.sense = match words.next() {
                    Some("min") => Sense::Minimize,
                    Some("max") => Sense::Maximize,
                    other => return Err(err(format!("bad objective sense {other:?}"))),
                };
                section = Section::Objective;
                continue;
            }
            (_, "ROWS") => section = Section::Rows,
            (_, "BOUNDS") => section = Section::Bounds,
            (_, "INTEGER") => section = Section::Integer,
            (_, "BINARY") => section = Section::Binary,
            (_, "END") => section = Section::Done,
            (Section::Objective, "CONST") => {
                model.objective_constant =
                    words.next().and_then(parse_num).ok_or_else(|| err("bad CONST value".into()))?;
            }
            (Section::Named, _) => return Err(err("expected `OBJECTIVE <min|max>`".into())),
            (Section::Objective, _) => {
                let k = parse_num(head).ok_or_else(|| err(format!("bad coefficient `{head}`")))?;
                let col = words.next().ok_or_else(|| err("missing column".into()))?;
                model.objective.push((col.to_string(), k));
            }
            (Section::Rows, _) => model.rows.push(parse_row(line).map_err(err)?),
            (Section::Bounds, _) => {
                let parts: Vec<&str> = line.split_whitespace().collect();
                let [col, lo, hi] = parts[..] else { return Err(err("expected `<column> <lo> <hi>`".into())) };
                let lo = parse_num(lo).ok_or_else(|| err(format!("bad bound `{lo}`")))?;
                let hi = parse_num(hi).ok_or_else(|| err(format!("bad bound `{hi}`")))?;
                model.bounds.insert(col.to_string(), (lo, hi));
            }
            (Section::Integer, _) => model.integer.push(line.to_string()),
            (Section::Binary, _) => model.binary.push(line.to_string()),
            (Section::Done, _) => unreachable!(),
        }
    }
    if section != Section::Done {
        return Err(InterchangeError { line: text.lines().count(), message: "missing END".into() });
    }
    Ok(model)
}

fn parse_row(line: &str) -> Result<InterchangeRow, String> {
    let (head, body) = line.split_once(':').ok_or("row without `:`")?;
    let parts: Vec<&str> = head.split_whitespace().collect();
    let [id, rel, rhs] = parts[..] else { return Err("expected `<row-id> <rel> <rhs>:`".into()) };
    let rel = Rel::from_keyword(rel).ok_or_else(|| format!("bad relation `{rel}`"))?;
    let rhs = parse_num(rhs).ok_or_else(|| format!("bad rhs `{rhs}`"))?;
    let mut terms = Vec::new();
    if !body.trim().is_empty() {
        for term in body.split(" + ") {
            let mut w = term.split_whitespace();
            let (Some(k), Some(col), None) = (w.next(), w.next(), w.next()) else {
                return Err(format!("bad term `{}`", term.trim()));
            };
            terms.push((col.to_string(), parse_num(k).ok_or_else(|| format!("bad coefficient `{k}`"))?));
        }
    }
    Ok(InterchangeRow { id: id.to_string(), rel, rhs, terms })
}

/// An external backend's answer.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionFile {
    pub status: SolveStatus,
    pub objective: Option<f64>,
    pub values: IndexMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("solution file line {line}: {message}")]
pub struct SolutionParseError {
    pub line: usize,
    pub message: String,
}

pub fn parse_solution_file(text: &str) -> Result<SolutionFile, SolutionParseError> {
    let mut status = None;
    let mut objective = None;
    let mut values = IndexMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| SolutionParseError { line: i + 1, message };
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [key, value] = parts[..] else { return Err(err(format!("expected two fields, got `{line}`"))) };
        match key {
            "STATUS" => status = Some(SolveStatus::parse(value).ok_or_else(|| err(format!("unknown status `{value}`")))?),
            "OBJECTIVE" => objective = Some(parse_num(value).ok_or_else(|| err(format!("bad objective `{value}`")))?),
            col => {
                let v = parse_num(value).ok_or_else(|| err(format!("bad value `{value}`")))?;
                if values.insert(col.to_string(), v).is_some() {
                    return Err(err(format!("column `{col}` given twice")));
                }
            }
        }
    }
    let status = status.ok_or(SolutionParseError { line: 0, message: "missing STATUS line".into() })?;
    Ok(SolutionFile { status, objective, values })
}

pub fn write_solution_file(s: &SolutionFile) -> String {
    let mut out = format!("STATUS {}\n", s.status);
    if let Some(v) = s.objective {
        let _ = writeln!(out, "OBJECTIVE {}", num(v));
    }
    for (c, v) in &s.values {
        let _ = writeln!(out, "{c} {}", num(*v));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solution_file_round_trip() {
        let s = SolutionFile {
            status: SolveStatus::Optimal,
            objective: Some(3.5),
            values: [("x[1]".to_string(), 1.0), ("K".to_string(), 34.485)].into_iter().collect(),
        };
        assert_eq!(parse_solution_file(&write_solution_file(&s)).unwrap(), s);
    }

    #[test]
    fn solution_file_errors() {
        assert!(parse_solution_file("OBJECTIVE 1\n").is_err());
        assert_eq!(parse_solution_file("STATUS optimal\nx one\n").unwrap_err().line, 2);
        assert!(parse_solution_file("STATUS weird\n").is_err());
    }

    #[test]
    fn reads_rows_with_negative_coefficients() {
        let doc = "MODEL m\nOBJECTIVE max\n1 x\nCONST 0\nROWS\nr1 le 4: 2 x + -1 y\nr2 eq 0: \nBOUNDS\nx 0 inf\ny -inf 3\nINTEGER\nx\nBINARY\nEND\n";
        let m = parse_interchange(doc).unwrap();
        assert_eq!(m.sense, Sense::Maximize);
        assert_eq!(m.rows[0].terms, vec![("x".to_string(), 2.0), ("y".to_string(), -1.0)]);
        assert!(m.rows[1].terms.is_empty());
        assert_eq!(m.bounds["y"], (f64::NEG_INFINITY, 3.0));
        assert_eq!(m.kind("x"), VarType::Integer);
    }

    #[test]
    fn rejects_truncated_document() {
        assert!(parse_interchange("MODEL m\nOBJECTIVE min\nCONST 0\nROWS\n").is_err());
    }
}
