//! Expression grammar for blueprint formulas.
//!
//! ```text
//! relation := expr REL expr [ "for" binders ]
//! expr     := term (("+" | "-") term)*
//! term     := unary (("*" | "/") unary)*
//! unary    := "-" unary | primary
//! primary  := NUMBER | "(" expr ")" | "sum" "(" expr "for" binders ")" | IDENT [ "[" index ("," index)* "]" ]
//! binders  := IDENT "in" IDENT ("," IDENT "in" IDENT)*
//! index    := IDENT [("+" | "-") INT] | ["-"] INT | "'" label "'"
//! ```
//!
//! `REL` is one of `==`, `<=`, `>=` (`=`, `≤`, `≥` are accepted spellings).
//! Parsing yields an [`Ast`] of unresolved names; the model compiler turns it
//! into an [`Expr`] once parameters and variables are known.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::blueprint::ConstraintCategory;

/// One value of an index set: `1`, `2024`, or a label like `'north'`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IndexValue {
    Int(i64),
    Label(String),
}

impl fmt::Display for IndexValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IndexValue::Int(v) => write!(f, "{v}"),
            IndexValue::Label(s) => f.write_str(s),
        }
    }
}

/// Byte range into the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    fn to(self, other: Span) -> Span {
        Span { start: self.start, end: other.end }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rel {
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
}

impl Rel {
    pub fn symbol(self) -> &'static str {
        match self {
            Rel::Eq => "==",
            Rel::Le => "<=",
            Rel::Ge => ">=",
        }
    }

    /// Keyword used by the interchange format.
    pub fn keyword(self) -> &'static str {
        match self {
            Rel::Eq => "eq",
            Rel::Le => "le",
            Rel::Ge => "ge",
        }
    }

    pub fn from_keyword(word: &str) -> Option<Self> {
        match word {
            "eq" => Some(Rel::Eq),
            "le" => Some(Rel::Le),
            "ge" => Some(Rel::Ge),
            _ => None,
        }
    }
}

/// `i in SET` inside a sum or a constraint-family quantifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Binder {
    pub name: String,
    pub set: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IndexTerm {
    /// A bound index name, optionally shifted: `t`, `t-1`.
    Binder { name: String, offset: i64 },
    Literal(IndexValue),
}

impl fmt::Display for IndexTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IndexTerm::Binder { name, offset: 0 } => f.write_str(name),
            IndexTerm::Binder { name, offset } if *offset > 0 => write!(f, "{name}+{offset}"),
            IndexTerm::Binder { name, offset } => write!(f, "{name}{offset}"),
            IndexTerm::Literal(IndexValue::Int(v)) => write!(f, "{v}"),
            IndexTerm::Literal(IndexValue::Label(s)) => write!(f, "'{s}'"),
        }
    }
}

/// Parsed but unresolved expression.
#[derive(Debug, Clone, PartialEq)]
pub enum Ast {
    Num(f64, Span),
    Ref { name: String, index: Option<Vec<IndexTerm>>, span: Span },
    Neg(Box<Ast>, Span),
    Bin(BinOp, Box<Ast>, Box<Ast>),
    Sum { binders: Vec<Binder>, body: Box<Ast>, span: Span },
}

impl Ast {
    pub fn span(&self) -> Span {
        match self {
            Ast::Num(_, s) | Ast::Ref { span: s, .. } | Ast::Neg(_, s) | Ast::Sum { span: s, .. } => *s,
            Ast::Bin(_, l, r) => l.span().to(r.span()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AstRelation {
    pub lhs: Ast,
    pub rel: Rel,
    pub rhs: Ast,
    pub over: Vec<Binder>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message} at {span}")]
pub struct SyntaxError {
    pub span: Span,
    pub message: String,
}

/// Resolved expression tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Const(f64),
    Param { id: String, index: Vec<IndexTerm> },
    Var { name: String, index: Vec<IndexTerm> },
    Neg(Box<Expr>),
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Sum { binders: Vec<Binder>, body: Box<Expr> },
}

impl Expr {
    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }
    }

    pub fn var(name: &str, index: Vec<IndexTerm>) -> Expr {
        Expr::Var { name: name.to_string(), index }
    }

    pub fn param(id: &str, index: Vec<IndexTerm>) -> Expr {
        Expr::Param { id: id.to_string(), index }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary { op, .. } => op.precedence(),
            Expr::Neg(_) => 3,
            _ => 4,
        }
    }

    /// True when the tree contains no variable reference.
    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::Param { .. } => true,
            Expr::Var { .. } => false,
            Expr::Neg(e) => e.is_constant(),
            Expr::Binary { lhs, rhs, .. } => lhs.is_constant() && rhs.is_constant(),
            Expr::Sum { body, .. } => body.is_constant(),
        }
    }
}

fn write_index(f: &mut fmt::Formatter<'_>, index: &[IndexTerm]) -> fmt::Result {
    if index.is_empty() {
        return Ok(());
    }
    f.write_str("[")?;
    for (i, t) in index.iter().enumerate() {
        if i > 0 {
            f.write_str(",")?;
        }
        write!(f, "{t}")?;
    }
    f.write_str("]")
}

fn write_binders(f: &mut fmt::Formatter<'_>, binders: &[Binder]) -> fmt::Result {
    for (i, b) in binders.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{} in {}", b.name, b.set)?;
    }
    Ok(())
}

/// Prints in the same grammar the parser accepts (parameters by id).
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(v) => write!(f, "{v}"),
            Expr::Param { id, index } => {
                f.write_str(id)?;
                write_index(f, index)
            }
            Expr::Var { name, index } => {
                f.write_str(name)?;
                write_index(f, index)
            }
            Expr::Neg(e) => {
                if e.precedence() < 3 {
                    write!(f, "-({e})")
                } else {
                    write!(f, "-{e}")
                }
            }
            Expr::Binary { op, lhs, rhs } => {
                let p = op.precedence();
                if lhs.precedence() < p {
                    write!(f, "({lhs})")?;
                } else {
                    write!(f, "{lhs}")?;
                }
                write!(f, " {} ", op.symbol())?;
                // Right operand of - and / needs parentheses at equal precedence.
                if rhs.precedence() < p || (rhs.precedence() == p && matches!(op, BinOp::Sub | BinOp::Div)) {
                    write!(f, "({rhs})")
                } else {
                    write!(f, "{rhs}")
                }
            }
            Expr::Sum { binders, body } => {
                write!(f, "sum({body} for ")?;
                write_binders(f, binders)?;
                f.write_str(")")
            }
        }
    }
}

/// A compiled constraint family. `over` is empty for a single row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelExpr {
    pub id: String,
    pub lhs: Expr,
    pub rel: Rel,
    pub rhs: Expr,
    pub over: Vec<Binder>,
    pub category: ConstraintCategory,
}

impl fmt::Display for RelExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.lhs, self.rel.symbol(), self.rhs)?;
        if !self.over.is_empty() {
            f.write_str(" for ")?;
            write_binders(f, &self.over)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64, bool),
    Ident(String),
    Label(String),
    LParen,
    RParen,
    LBrack,
    RBrack,
    Comma,
    Op(BinOp),
    Rel(Rel),
    End,
}

fn lex(src: &str) -> Result<Vec<(Tok, Span)>, SyntaxError> {
    let mut out = Vec::new();
    let chars: Vec<(usize, char)> = src.char_indices().collect();
    let end_of = |i: usize| chars.get(i).map_or(src.len(), |c| c.0);
    let mut i = 0;
    while i < chars.len() {
        let (start, c) = chars[i];
        let single = |tok: Tok, width: usize| (tok, Span { start, end: end_of(i + width) });
        let two = chars.get(i + 1).map(|c| c.1);
        let (tok, span) = match c {
            c if c.is_whitespace() => {
                i += 1;
                continue;
            }
            '(' => single(Tok::LParen, 1),
            ')' => single(Tok::RParen, 1),
            '[' => single(Tok::LBrack, 1),
            ']' => single(Tok::RBrack, 1),
            ',' => single(Tok::Comma, 1),
            '+' => single(Tok::Op(BinOp::Add), 1),
            '-' | '−' => single(Tok::Op(BinOp::Sub), 1),
            '*' | '·' | '×' => single(Tok::Op(BinOp::Mul), 1),
            '/' => single(Tok::Op(BinOp::Div), 1),
            '≤' => single(Tok::Rel(Rel::Le), 1),
            '≥' => single(Tok::Rel(Rel::Ge), 1),
            '<' | '>' | '=' => {
                let rel = match c {
                    '<' => Rel::Le,
                    '>' => Rel::Ge,
                    _ => Rel::Eq,
                };
                if two == Some('=') {
                    single(Tok::Rel(rel), 2)
                } else if c == '=' {
                    single(Tok::Rel(Rel::Eq), 1)
                } else {
                    return Err(SyntaxError {
                        span: Span { start, end: end_of(i + 1) },
                        message: format!("strict `{c}` is not supported; use `{c}=`"),
                    });
                }
            }
            '\'' | '"' => {
                let close = chars[i + 1..].iter().position(|&(_, d)| d == c).ok_or(SyntaxError {
                    span: Span { start, end: src.len() },
                    message: "unterminated label".into(),
                })?;
                let label: String = chars[i + 1..i + 1 + close].iter().map(|c| c.1).collect();
                single(Tok::Label(label), close + 2)
            }
            c if c.is_ascii_digit() || (c == '.' && two.is_some_and(|d| d.is_ascii_digit())) => {
                let mut j = i;
                let mut integer = true;
                while j < chars.len() && (chars[j].1.is_ascii_digit() || chars[j].1 == '.') {
                    integer &= chars[j].1 != '.';
                    j += 1;
                }
                if j < chars.len() && matches!(chars[j].1, 'e' | 'E') {
                    let mut k = j + 1;
                    if k < chars.len() && matches!(chars[k].1, '+' | '-') {
                        k += 1;
                    }
                    if k < chars.len() && chars[k].1.is_ascii_digit() {
                        integer = false;
                        j = k;
                        while j < chars.len() && chars[j].1.is_ascii_digit() {
                            j += 1;
                        }
                    }
                }
                let text = &src[start..end_of(j)];
                let v: f64 = text.parse().map_err(|_| SyntaxError {
                    span: Span { start, end: end_of(j) },
                    message: format!("invalid number `{text}`"),
                })?;
                single(Tok::Num(v, integer), j - i)
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut j = i;
                while j < chars.len() && (chars[j].1.is_alphanumeric() || chars[j].1 == '_') {
                    j += 1;
                }
                single(Tok::Ident(src[start..end_of(j)].to_string()), j - i)
            }
            other => {
                return Err(SyntaxError {
                    span: Span { start, end: end_of(i + 1) },
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        i = chars.partition_point(|&(off, _)| off < span.end);
        out.push((tok, span));
    }
    out.push((Tok::End, Span { start: src.len(), end: src.len() }));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn span(&self) -> Span {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, Span) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, SyntaxError> {
        Err(SyntaxError { span: self.span(), message: message.into() })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<Span, SyntaxError> {
        if *self.peek() == tok {
            Ok(self.bump().1)
        } else {
            self.error(format!("expected {what}"))
        }
    }

    fn is_keyword(&self, word: &str) -> bool {
        matches!(self.peek(), Tok::Ident(w) if w == word)
    }

    fn expr(&mut self) -> Result<Ast, SyntaxError> {
        let mut lhs = self.term()?;
        while let Tok::Op(op @ (BinOp::Add | BinOp::Sub)) = *self.peek() {
            self.bump();
            let rhs = self.term()?;
            lhs = Ast::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Ast, SyntaxError> {
        let mut lhs = self.unary()?;
        while let Tok::Op(op @ (BinOp::Mul | BinOp::Div)) = *self.peek() {
            self.bump();
            let rhs = self.unary()?;
            lhs = Ast::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Ast, SyntaxError> {
        match self.peek() {
            Tok::Op(BinOp::Sub) => {
                let start = self.bump().1;
                let inner = self.unary()?;
                let span = start.to(inner.span());
                Ok(Ast::Neg(Box::new(inner), span))
            }
            Tok::Op(BinOp::Add) => {
                self.bump();
                self.unary()
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Ast, SyntaxError> {
        match self.peek().clone() {
            Tok::Num(v, _) => Ok(Ast::Num(v, self.bump().1)),
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) if name == "sum" && self.toks[self.pos + 1].0 == Tok::LParen => {
                let start = self.bump().1;
                self.bump();
                let body = self.expr()?;
                if !self.is_keyword("for") {
                    return self.error("expected `for` inside sum");
                }
                self.bump();
                let binders = self.binders()?;
                let end = self.expect(Tok::RParen, "`)` closing sum")?;
                Ok(Ast::Sum { binders, body: Box::new(body), span: start.to(end) })
            }
            Tok::Ident(name) => {
                let mut span = self.bump().1;
                let index = if *self.peek() == Tok::LBrack {
                    self.bump();
                    let mut terms = vec![self.index_term()?];
                    while *self.peek() == Tok::Comma {
                        self.bump();
                        terms.push(self.index_term()?);
                    }
                    span = span.to(self.expect(Tok::RBrack, "`]`")?);
                    Some(terms)
                } else {
                    None
                };
                Ok(Ast::Ref { name, index, span })
            }
            Tok::End => self.error("unexpected end of expression"),
            _ => self.error("expected a number, name, `sum(` or `(`"),
        }
    }

    fn int_literal(&mut self) -> Result<i64, SyntaxError> {
        match *self.peek() {
            Tok::Num(v, true) => {
                self.bump();
                Ok(v as i64)
            }
            _ => self.error("expected an integer index"),
        }
    }

    fn index_term(&mut self) -> Result<IndexTerm, SyntaxError> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                self.bump();
                let offset = match *self.peek() {
                    Tok::Op(BinOp::Add) => {
                        self.bump();
                        self.int_literal()?
                    }
                    Tok::Op(BinOp::Sub) => {
                        self.bump();
                        -self.int_literal()?
                    }
                    _ => 0,
                };
                Ok(IndexTerm::Binder { name, offset })
            }
            Tok::Op(BinOp::Sub) => {
                self.bump();
                Ok(IndexTerm::Literal(IndexValue::Int(-self.int_literal()?)))
            }
            Tok::Label(s) => {
                self.bump();
                Ok(IndexTerm::Literal(IndexValue::Label(s)))
            }
            _ => Ok(IndexTerm::Literal(IndexValue::Int(self.int_literal()?))),
        }
    }

    fn binders(&mut self) -> Result<Vec<Binder>, SyntaxError> {
        let mut out = Vec::new();
        loop {
            let name = match self.bump() {
                (Tok::Ident(n), _) => n,
                (_, span) => return Err(SyntaxError { span, message: "expected an index name".into() }),
            };
            if !self.is_keyword("in") && !matches!(self.peek(), Tok::Ident(w) if w == "∈") {
                return self.error("expected `in`");
            }
            self.bump();
            let set = match self.bump() {
                (Tok::Ident(n), _) => n,
                (_, span) => return Err(SyntaxError { span, message: "expected an index set name".into() }),
            };
            if out.iter().any(|b: &Binder| b.name == name) {
                return self.error(format!("index `{name}` bound twice"));
            }
            out.push(Binder { name, set });
            if *self.peek() != Tok::Comma {
                return Ok(out);
            }
            self.bump();
        }
    }
}

/// Parses a bare expression (objective, bound text).
pub fn parse_expression(src: &str) -> Result<Ast, SyntaxError> {
    let mut p = Parser { toks: lex(src)?, pos: 0 };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return p.error("unexpected trailing input");
    }
    Ok(e)
}

/// Parses `lhs REL rhs [for binders]`.
pub fn parse_relation(src: &str) -> Result<AstRelation, SyntaxError> {
    let mut p = Parser { toks: lex(src)?, pos: 0 };
    let lhs = p.expr()?;
    let rel = match p.peek() {
        Tok::Rel(r) => *r,
        _ => return p.error("expected a relation (`==`, `<=` or `>=`)"),
    };
    p.bump();
    let rhs = p.expr()?;
    let over = if p.is_keyword("for") || p.is_keyword("forall") {
        p.bump();
        p.binders()?
    } else {
        Vec::new()
    };
    if *p.peek() != Tok::End {
        return p.error("unexpected trailing input");
    }
    Ok(AstRelation { lhs, rel, rhs, over })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sum_with_two_binders() {
        let ast = parse_expression("sum(p[i,j] for i in I, j in J)").unwrap();
        match ast {
            Ast::Sum { binders, body, .. } => {
                assert_eq!(binders.len(), 2);
                assert!(matches!(*body, Ast::Ref { ref name, .. } if name == "p"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn precedence_and_unary() {
        let ast = parse_expression("-a + b * c").unwrap();
        match ast {
            Ast::Bin(BinOp::Add, l, r) => {
                assert!(matches!(*l, Ast::Neg(..)));
                assert!(matches!(*r, Ast::Bin(BinOp::Mul, ..)));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn relation_with_family_and_shift() {
        let r = parse_relation("G[g,t] - G[g,t-1] <= RU[g] for g in GEN, t in T2").unwrap();
        assert_eq!(r.rel, Rel::Le);
        assert_eq!(r.over.len(), 2);
        let Ast::Bin(_, _, rhs) = &r.lhs else { panic!() };
        let Ast::Ref { index: Some(idx), .. } = rhs.as_ref() else { panic!() };
        assert_eq!(idx[1], IndexTerm::Binder { name: "t".into(), offset: -1 });
    }

    #[test]
    fn scientific_literal() {
        assert!(matches!(parse_expression("1e-05").unwrap(), Ast::Num(v, _) if v == 1e-5));
    }

    #[test]
    fn unicode_relations() {
        assert_eq!(parse_relation("x ≤ 3").unwrap().rel, Rel::Le);
        assert_eq!(parse_relation("x = 3").unwrap().rel, Rel::Eq);
    }

    #[test]
    fn syntax_errors_carry_spans() {
        let err = parse_relation("x + <= 3").unwrap_err();
        assert_eq!(err.span, Span { start: 4, end: 6 });
        let err = parse_expression("sum(x[i] in I)").unwrap_err();
        assert!(err.message.contains("for"));
        assert!(parse_relation("x < 3").is_err());
    }
}
