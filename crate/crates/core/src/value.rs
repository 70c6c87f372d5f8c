//! Typed comparison semantics shared by the index and the query engine.
//!
//! Stored annotation values are strings already normalized by the
//! annotator. Numbers compare numerically, dates compare as ISO strings,
//! everything else compares as normalized text. A null (no value) never
//! satisfies a comparison.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::annotator::{parse_date, parse_number, Normalization};
use crate::schema::ValueType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CompareOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CompareOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CompareOp::Eq => "=",
            CompareOp::Ne => "!=",
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
        }
    }

    pub fn holds(self, ord: Ordering) -> bool {
        match self {
            CompareOp::Eq => ord == Ordering::Equal,
            CompareOp::Ne => ord != Ordering::Equal,
            CompareOp::Lt => ord == Ordering::Less,
            CompareOp::Le => ord != Ordering::Greater,
            CompareOp::Gt => ord == Ordering::Greater,
            CompareOp::Ge => ord != Ordering::Less,
        }
    }
}

impl fmt::Display for CompareOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// A query literal as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Literal {
    Str(String),
    Num(f64),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Str(s) => write!(f, "'{}'", s.replace('\'', "''")),
            Literal::Num(n) => write!(f, "{}", format_number(*n)),
        }
    }
}

/// Comparable form of a value under a field type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Key {
    Num(f64),
    Text(String),
}

impl Eq for Key {}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Key::Num(a), Key::Num(b)) => a.total_cmp(b),
            (Key::Text(a), Key::Text(b)) => a.cmp(b),
            (Key::Num(_), Key::Text(_)) => Ordering::Less,
            (Key::Text(_), Key::Num(_)) => Ordering::Greater,
        }
    }
}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn normalize_text(s: &str) -> String {
    Normalization::default().apply(s)
}

/// Render a float the way numbers are canonicalized in annotations.
pub fn format_number(n: f64) -> String {
    if n.fract() == 0.0 && n.abs() < 1e15 {
        format!("{}", n as i64)
    } else {
        let s = format!("{n}");
        crate::annotator::canonical_decimal(&s)
    }
}

/// Key of a stored value; `None` when the value does not parse under the type.
pub fn stored_key(vt: ValueType, value: &str) -> Option<Key> {
    match vt {
        ValueType::Number => value.parse::<f64>().ok().map(Key::Num),
        ValueType::Date => Some(Key::Text(value.to_string())),
        _ => Some(Key::Text(normalize_text(value))),
    }
}

/// Coerce a literal to a field type, or explain why it cannot be.
pub fn literal_key(vt: ValueType, lit: &Literal) -> Result<Key, String> {
    match (vt, lit) {
        (ValueType::Number, Literal::Num(n)) => Ok(Key::Num(*n)),
        (ValueType::Number, Literal::Str(s)) => parse_number(s)
            .and_then(|d| d.parse().ok())
            .map(Key::Num)
            .ok_or_else(|| format!("{s:?} is not a number")),
        (ValueType::Date, Literal::Str(s)) => {
            parse_date(s, true).map(Key::Text).ok_or_else(|| format!("{s:?} is not a date"))
        }
        (ValueType::Date, Literal::Num(n)) => Err(format!("{} is not a date", format_number(*n))),
        (_, Literal::Str(s)) => Ok(Key::Text(normalize_text(s))),
        (_, Literal::Num(n)) => Ok(Key::Text(format_number(*n))),
    }
}

/// Existential comparison over a (possibly multi-valued) stored value list.
pub fn any_matches(vt: ValueType, values: &[String], op: CompareOp, key: &Key) -> bool {
    values
        .iter()
        .filter_map(|v| stored_key(vt, v))
        .any(|k| op.holds(k.cmp(key)))
}

/// Sorted, deduplicated row ids.
pub type DocSet = Vec<u32>;

pub fn intersect(a: &[u32], b: &[u32]) -> DocSet {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::with_capacity(a.len().min(b.len()));
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

pub fn union(a: &[u32], b: &[u32]) -> DocSet {
    let mut out: Vec<u32> = a.iter().chain(b).copied().collect();
    out.sort_unstable();
    out.dedup();
    out
}
