//! Denial constraints and functional dependencies.
//!
//! Constraint files hold one rule per line:
//!
//! ```text
//! # comments and blank lines are ignored
//! FD: zip -> city
//! FD: first, last -> email
//! DC: t1.age < 0
//! DC: t1.state = t2.state AND t1.rate > t2.rate AND t1.tax < t2.tax
//! DC: t1.status = 'closed' AND t1.balance != 0
//! ```
//!
//! A denial constraint forbids the conjunction of its predicates; a tuple (or
//! ordered tuple pair) for which every predicate holds is a violation.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tabular::{parse_number, CellRef, CellValue, Dataset, DetectionMask};

#[derive(Debug, Error, PartialEq)]
pub enum ConstraintError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown column `{column}`")]
    UnknownColumn { line: usize, column: String },
    #[error("constraint {constraint}: column `{column}` is not bound in the dataset")]
    Unbound { constraint: String, column: String },
    #[error("constraint {constraint}: {reason}")]
    TypeMismatch { constraint: String, reason: String },
}

pub type Result<T> = std::result::Result<T, ConstraintError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tuple {
    T1,
    T2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn is_ordering(self) -> bool {
        !matches!(self, CmpOp::Eq | CmpOp::Ne)
    }

    fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Eq => ord == Equal,
            CmpOp::Ne => ord != Equal,
            CmpOp::Lt => ord == Less,
            CmpOp::Le => ord != Greater,
            CmpOp::Gt => ord == Greater,
            CmpOp::Ge => ord != Less,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Literal {
    Number(f64),
    Text(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Operand {
    Attr { tuple: Tuple, column: String },
    Const(Literal),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub left: Operand,
    pub op: CmpOp,
    pub right: Operand,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scope {
    SingleTuple,
    TuplePair,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionalDependency {
    pub lhs: Vec<String>,
    pub rhs: String,
}

impl FunctionalDependency {
    /// ¬(t1.lhs = t2.lhs ∧ t1.rhs ≠ t2.rhs)
    pub fn to_denial_constraint(&self, id: impl Into<String>) -> DenialConstraint {
        let attr = |tuple, c: &str| Operand::Attr { tuple, column: c.to_string() };
        let mut predicates: Vec<Predicate> = self
            .lhs
            .iter()
            .map(|c| Predicate { left: attr(Tuple::T1, c), op: CmpOp::Eq, right: attr(Tuple::T2, c) })
            .collect();
        predicates.push(Predicate {
            left: attr(Tuple::T1, &self.rhs),
            op: CmpOp::Ne,
            right: attr(Tuple::T2, &self.rhs),
        });
        DenialConstraint { id: id.into(), predicates, scope: Scope::TuplePair, fd: Some(self.clone()) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenialConstraint {
    pub id: String,
    pub predicates: Vec<Predicate>,
    pub scope: Scope,
    /// Set when the constraint was written as a functional dependency.
    pub fd: Option<FunctionalDependency>,
}

impl DenialConstraint {
    pub fn new(id: impl Into<String>, predicates: Vec<Predicate>) -> Self {
        let scope = if predicates.iter().any(|p| p.mentions(Tuple::T2)) {
            Scope::TuplePair
        } else {
            Scope::SingleTuple
        };
        DenialConstraint { id: id.into(), predicates, scope, fd: None }
    }

    /// Column names referenced anywhere in the constraint, in first-seen order.
    pub fn columns(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for p in &self.predicates {
            for o in [&p.left, &p.right] {
                if let Operand::Attr { column, .. } = o {
                    if !out.contains(&column.as_str()) {
                        out.push(column);
                    }
                }
            }
        }
        out
    }
}

impl Predicate {
    fn mentions(&self, t: Tuple) -> bool {
        [&self.left, &self.right]
            .iter()
            .any(|o| matches!(o, Operand::Attr { tuple, .. } if *tuple == t))
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Attr { tuple, column } => {
                write!(f, "{}.{column}", if *tuple == Tuple::T1 { "t1" } else { "t2" })
            }
            Operand::Const(Literal::Number(v)) => write!(f, "{v}"),
            Operand::Const(Literal::Text(s)) => write!(f, "'{s}'"),
        }
    }
}

impl fmt::Display for DenialConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .predicates
            .iter()
            .map(|p| format!("{} {} {}", p.left, p.op.symbol(), p.right))
            .collect();
        write!(f, "{}: not({})", self.id, parts.join(" AND "))
    }
}

/// Parses a constraint file against the given column names. Constraints are
/// numbered `c1, c2, ...` in file order.
pub fn parse_constraints(text: &str, columns: &[&str]) -> Result<Vec<DenialConstraint>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let id = format!("c{}", out.len() + 1);
        let check = |c: &str| -> Result<()> {
            if columns.contains(&c) {
                Ok(())
            } else {
                Err(ConstraintError::UnknownColumn { line, column: c.to_string() })
            }
        };
        if let Some(rest) = strip_keyword(body, "FD:") {
            let (lhs, rhs) = rest.split_once("->").ok_or_else(|| ConstraintError::Syntax {
                line,
                message: "functional dependency needs `->`".into(),
            })?;
            let lhs: Vec<String> = lhs.split(',').map(|s| s.trim().to_string()).collect();
            let rhs = rhs.trim().to_string();
            if lhs.iter().any(String::is_empty) || rhs.is_empty() || rhs.contains(',') {
                return Err(ConstraintError::Syntax { line, message: "malformed column list".into() });
            }
            if lhs.contains(&rhs) {
                return Err(ConstraintError::Syntax { line, message: format!("`{rhs}` on both sides") });
            }
            for c in lhs.iter().chain(std::iter::once(&rhs)) {
                check(c)?;
            }
            out.push(FunctionalDependency { lhs, rhs }.to_denial_constraint(id));
        } else if let Some(rest) = strip_keyword(body, "DC:") {
            let mut predicates = Vec::new();
            for part in split_and(rest) {
                let p = parse_predicate(part.trim()).map_err(|message| ConstraintError::Syntax { line, message })?;
                for o in [&p.left, &p.right] {
                    if let Operand::Attr { column, .. } = o {
                        check(column)?;
                    }
                }
                predicates.push(p);
            }
            if predicates.is_empty() {
                return Err(ConstraintError::Syntax { line, message: "empty denial constraint".into() });
            }
            out.push(DenialConstraint::new(id, predicates));
        } else {
            return Err(ConstraintError::Syntax { line, message: "expected `FD:` or `DC:`".into() });
        }
    }
    Ok(out)
}

fn strip_keyword<'a>(s: &'a str, kw: &str) -> Option<&'a str> {
    if s.len() >= kw.len() && s[..kw.len()].eq_ignore_ascii_case(kw) {
        Some(&s[kw.len()..])
    } else {
        None
    }
}

/// Splits on the keyword `AND` outside of quoted literals.
fn split_and(s: &str) -> Vec<&str> {
    let bytes = s.as_bytes();
    let mut parts = Vec::new();
    let mut start = 0;
    let mut in_quote = false;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'\'' => in_quote = !in_quote,
            b'A' | b'a' if !in_quote && i + 3 <= bytes.len() && s[i..i + 3].eq_ignore_ascii_case("and") => {
                let before_ws = i == 0 || bytes[i - 1].is_ascii_whitespace();
                let after_ws = i + 3 == bytes.len() || bytes[i + 3].is_ascii_whitespace();
                if before_ws && after_ws {
                    parts.push(&s[start..i]);
                    start = i + 3;
                    i += 3;
                    continue;
                }
            }
            _ => {}
        }
        i += 1;
    }
    parts.push(&s[start..]);
    parts.into_iter().filter(|p| !p.trim().is_empty()).collect()
}

const OPERATORS: &[(&str, CmpOp)] = &[
    ("<=", CmpOp::Le),
    (">=", CmpOp::Ge),
    ("!=", CmpOp::Ne),
    ("<>", CmpOp::Ne),
    ("\u{2260}", CmpOp::Ne),
    ("\u{2264}", CmpOp::Le),
    ("\u{2265}", CmpOp::Ge),
    ("=", CmpOp::Eq),
    ("<", CmpOp::Lt),
    (">", CmpOp::Gt),
];

fn parse_predicate(s: &str) -> std::result::Result<Predicate, String> {
    // Locate the operator outside quotes.
    let mut in_quote = false;
    let mut found = None;
    for (i, ch) in s.char_indices() {
        if ch == '\'' {
            in_quote = !in_quote;
            continue;
        }
        if in_quote {
            continue;
        }
        if let Some((sym, op)) = OPERATORS.iter().find(|(sym, _)| s[i..].starts_with(sym)) {
            found = Some((i, sym.len(), *op));
            break;
        }
    }
    let (pos, len, op) = found.ok_or_else(|| format!("no comparison operator in `{s}`"))?;
    let left = parse_operand(s[..pos].trim())?;
    let right = parse_operand(s[pos + len..].trim())?;
    if matches!((&left, &right), (Operand::Const(_), Operand::Const(_))) {
        return Err(format!("predicate `{s}` compares two constants"));
    }
    Ok(Predicate { left, op, right })
}

fn parse_operand(s: &str) -> std::result::Result<Operand, String> {
    if s.is_empty() {
        return Err("missing operand".into());
    }
    for (prefix, tuple) in [("t1.", Tuple::T1), ("t2.", Tuple::T2)] {
        if let Some(col) = strip_keyword(s, prefix) {
            let col = col.trim();
            if col.is_empty() {
                return Err(format!("missing column after `{prefix}`"));
            }
            return Ok(Operand::Attr { tuple, column: col.to_string() });
        }
    }
    if s.len() >= 2 && s.starts_with('\'') && s.ends_with('\'') {
        return Ok(Operand::Const(Literal::Text(s[1..s.len() - 1].to_string())));
    }
    match parse_number(s) {
        Some(v) => Ok(Operand::Const(Literal::Number(v))),
        None => Err(format!("cannot parse operand `{s}` (quote string literals)")),
    }
}

/// Operand resolved against a dataset.
#[derive(Clone, Debug)]
enum Bound {
    Attr(Tuple, usize),
    Num(f64),
    Text(String),
}

#[derive(Clone, Debug)]
struct BoundPredicate {
    left: Bound,
    op: CmpOp,
    right: Bound,
}

struct BoundConstraint {
    predicates: Vec<BoundPredicate>,
    scope: Scope,
    t1_cols: Vec<usize>,
    t2_cols: Vec<usize>,
}

fn bind(ds: &Dataset, dc: &DenialConstraint) -> Result<BoundConstraint> {
    let resolve = |o: &Operand| -> Result<Bound> {
        match o {
            Operand::Attr { tuple, column } => {
                let idx = ds.col_index(column).map_err(|_| ConstraintError::Unbound {
                    constraint: dc.id.clone(),
                    column: column.clone(),
                })?;
                Ok(Bound::Attr(*tuple, idx))
            }
            Operand::Const(Literal::Number(v)) => Ok(Bound::Num(*v)),
            Operand::Const(Literal::Text(t)) => Ok(Bound::Text(t.clone())),
        }
    };
    let mut predicates = Vec::new();
    let mut t1_cols = Vec::new();
    let mut t2_cols = Vec::new();
    for p in &dc.predicates {
        let left = resolve(&p.left)?;
        let mut right = resolve(&p.right)?;
        if p.op.is_ordering() {
            for b in [&left, &right] {
                if let Bound::Attr(_, c) = b {
                    if !ds.column(*c).is_numeric() {
                        return Err(ConstraintError::TypeMismatch {
                            constraint: dc.id.clone(),
                            reason: format!(
                                "`{}` compared with {} but column is {}",
                                ds.column(*c).name,
                                p.op.symbol(),
                                ds.column(*c).declared_type
                            ),
                        });
                    }
                }
            }
            if let Bound::Text(t) = &right {
                match parse_number(t) {
                    Some(v) => right = Bound::Num(v),
                    None => {
                        return Err(ConstraintError::TypeMismatch {
                            constraint: dc.id.clone(),
                            reason: format!("ordering against non-numeric literal '{t}'"),
                        })
                    }
                }
            }
            if let Bound::Text(t) = &left {
                return Err(ConstraintError::TypeMismatch {
                    constraint: dc.id.clone(),
                    reason: format!("ordering against non-numeric literal '{t}'"),
                });
            }
        }
        for b in [&left, &right] {
            if let Bound::Attr(t, c) = b {
                let cols = if *t == Tuple::T1 { &mut t1_cols } else { &mut t2_cols };
                if !cols.contains(c) {
                    cols.push(*c);
                }
            }
        }
        predicates.push(BoundPredicate { left, op: p.op, right });
    }
    // A single-tuple rule written with t2 only is evaluated on that tuple.
    let scope = if !t1_cols.is_empty() && !t2_cols.is_empty() { Scope::TuplePair } else { Scope::SingleTuple };
    if scope == Scope::SingleTuple && t1_cols.is_empty() {
        for p in &mut predicates {
            for b in [&mut p.left, &mut p.right] {
                if let Bound::Attr(t, _) = b {
                    *t = Tuple::T1;
                }
            }
        }
        std::mem::swap(&mut t1_cols, &mut t2_cols);
    }
    Ok(BoundConstraint { predicates, scope, t1_cols, t2_cols })
}

fn cell_of<'a>(ds: &'a Dataset, b: &Bound, r1: usize, r2: usize) -> Option<&'a CellValue> {
    match b {
        Bound::Attr(Tuple::T1, c) => Some(ds.cell(CellRef::new(r1, *c))),
        Bound::Attr(Tuple::T2, c) => Some(ds.cell(CellRef::new(r2, *c))),
        _ => None,
    }
}

/// Evaluates one predicate. Empty cells never satisfy a predicate, and
/// ordering comparisons need both sides to parse as numbers.
fn holds(ds: &Dataset, p: &BoundPredicate, r1: usize, r2: usize) -> bool {
    let l = cell_of(ds, &p.left, r1, r2);
    let r = cell_of(ds, &p.right, r1, r2);
    if l.is_some_and(CellValue::is_empty) || r.is_some_and(CellValue::is_empty) {
        return false;
    }
    let numeric = |b: &Bound, c: Option<&CellValue>| match b {
        Bound::Num(v) => Some(*v),
        Bound::Text(t) => parse_number(t),
        Bound::Attr(..) => c.and_then(CellValue::parsed),
    };
    let text = |b: &'_ Bound, c: Option<&CellValue>| -> String {
        match b {
            Bound::Num(v) => v.to_string(),
            Bound::Text(t) => t.clone(),
            Bound::Attr(..) => c.map(|c| c.raw().to_string()).unwrap_or_default(),
        }
    };
    let against_number = matches!(p.left, Bound::Num(_)) || matches!(p.right, Bound::Num(_));
    if p.op.is_ordering() || against_number {
        match (numeric(&p.left, l), numeric(&p.right, r)) {
            (Some(a), Some(b)) => p.op.holds(a.total_cmp(&b)),
            _ => false,
        }
    } else {
        let a = text(&p.left, l);
        let b = text(&p.right, r);
        p.op.holds(a.cmp(&b))
    }
}

fn violates(ds: &Dataset, bc: &BoundConstraint, r1: usize, r2: usize) -> bool {
    bc.predicates.iter().all(|p| holds(ds, p, r1, r2))
}

/// Cross-tuple equality predicates `t1.a = t2.b`, used to block candidate pairs.
fn blocking_keys(bc: &BoundConstraint) -> Vec<(usize, usize)> {
    bc.predicates
        .iter()
        .filter(|p| p.op == CmpOp::Eq)
        .filter_map(|p| match (&p.left, &p.right) {
            (Bound::Attr(Tuple::T1, a), Bound::Attr(Tuple::T2, b)) => Some((*a, *b)),
            (Bound::Attr(Tuple::T2, b), Bound::Attr(Tuple::T1, a)) => Some((*a, *b)),
            _ => None,
        })
        .collect()
}

fn key_of(ds: &Dataset, row: usize, cols: impl Iterator<Item = usize>) -> Option<Vec<&str>> {
    let mut key = Vec::new();
    for c in cols {
        let cell = ds.cell(CellRef::new(row, c));
        if cell.is_empty() {
            return None;
        }
        key.push(cell.raw());
    }
    Some(key)
}

fn violations_of(ds: &Dataset, bc: &BoundConstraint) -> Vec<CellRef> {
    let n = ds.row_count();
    match bc.scope {
        Scope::SingleTuple => (0..n)
            .into_par_iter()
            .filter(|&r| violates(ds, bc, r, r))
            .flat_map_iter(|r| bc.t1_cols.iter().map(move |&c| CellRef::new(r, c)))
            .collect(),
        Scope::TuplePair => {
            let keys = blocking_keys(bc);
            let flag = |r1: usize, r2: usize| {
                bc.t1_cols
                    .iter()
                    .map(move |&c| CellRef::new(r1, c))
                    .chain(bc.t2_cols.iter().map(move |&c| CellRef::new(r2, c)))
            };
            if keys.is_empty() {
                (0..n)
                    .into_par_iter()
                    .flat_map_iter(|r1| {
                        (0..n)
                            .filter(move |&r2| r2 != r1 && violates(ds, bc, r1, r2))
                            .flat_map(move |r2| flag(r1, r2))
                    })
                    .collect()
            } else {
                let mut buckets: HashMap<Vec<&str>, Vec<usize>> = HashMap::new();
                for r2 in 0..n {
                    if let Some(k) = key_of(ds, r2, keys.iter().map(|k| k.1)) {
                        buckets.entry(k).or_default().push(r2);
                    }
                }
                (0..n)
                    .into_par_iter()
                    .flat_map_iter(|r1| {
                        let candidates = key_of(ds, r1, keys.iter().map(|k| k.0))
                            .and_then(|k| buckets.get(&k))
                            .map(Vec::as_slice)
                            .unwrap_or(&[]);
                        candidates
                            .iter()
                            .copied()
                            .filter(move |&r2| r2 != r1 && violates(ds, bc, r1, r2))
                            .flat_map(move |r2| flag(r1, r2))
                            .collect::<Vec<_>>()
                    })
                    .collect()
            }
        }
    }
}

/// Flags every cell referenced by a violated constraint, in every tuple
/// taking part in the violation.
pub fn find_violations(ds: &Dataset, dcs: &[DenialConstraint]) -> Result<DetectionMask> {
    let bound = dcs.iter().map(|dc| bind(ds, dc)).collect::<Result<Vec<_>>>()?;
    let cells: BTreeSet<CellRef> = bound.iter().flat_map(|bc| violations_of(ds, bc)).collect();
    Ok(DetectionMask { cells, source: "rule".into() })
}

/// Same result as [`find_violations`] by scanning every ordered pair.
/// Quadratic; kept for cross-checking and for scalability measurements.
pub fn find_violations_all_pairs(ds: &Dataset, dcs: &[DenialConstraint]) -> Result<DetectionMask> {
    let mut cells = BTreeSet::new();
    for dc in dcs {
        let bc = bind(ds, dc)?;
        let n = ds.row_count();
        for r1 in 0..n {
            match bc.scope {
                Scope::SingleTuple => {
                    if violates(ds, &bc, r1, r1) {
                        cells.extend(bc.t1_cols.iter().map(|&c| CellRef::new(r1, c)));
                    }
                }
                Scope::TuplePair => {
                    for r2 in (0..n).filter(|&r2| r2 != r1) {
                        if violates(ds, &bc, r1, r2) {
                            cells.extend(bc.t1_cols.iter().map(|&c| CellRef::new(r1, c)));
                            cells.extend(bc.t2_cols.iter().map(|&c| CellRef::new(r2, c)));
                        }
                    }
                }
            }
        }
    }
    Ok(DetectionMask { cells, source: "rule".into() })
}
