//! The EXTRACT predicate: a pure text scan introducing a virtual field.

use super::ast::{Cond, ExtractSpec};
use super::table::{dynamic_holds, Cell};
use crate::corpus::tokenize;

/// Typed value captured by a regex condition.
pub type Captured = Cell;

/// Evaluate `spec` on one document text. `matched` requires the pattern
/// to hit and, when comparisons are attached, every comparison to hold on
/// the captured value. Only regex conditions capture.
pub fn eval_extract(spec: &ExtractSpec, text: &str) -> (bool, Option<Captured>) {
    let (hit, captured) = match &spec.cond {
        Cond::Regex { re, .. } => match re.captures(text) {
            Some(c) => {
                let m = c.get(1).or_else(|| c.get(0)).map_or("", |m| m.as_str());
                (true, Some(Cell::coerce(m)))
            }
            None => (false, None),
        },
        Cond::Contains(lit) => (text.to_lowercase().contains(&lit.to_lowercase()), None),
        Cond::Near { a, b, window } => (near(text, a, b, *window), None),
    };
    if !hit {
        return (false, None);
    }
    let ok = spec
        .value_cmp
        .iter()
        .all(|(op, lit)| captured.as_ref().is_some_and(|c| dynamic_holds(c, *op, lit)));
    (ok, captured)
}

fn positions(toks: &[String], phrase: &[String]) -> Vec<usize> {
    if phrase.is_empty() {
        return Vec::new();
    }
    toks.windows(phrase.len()).enumerate().filter(|(_, w)| *w == phrase).map(|(i, _)| i).collect()
}

/// Some occurrence of `a` starts within `window` tokens of some
/// occurrence of `b`.
fn near(text: &str, a: &str, b: &str, window: usize) -> bool {
    let toks = tokenize(text);
    let (ta, tb) = (tokenize(a), tokenize(b));
    let pa = positions(&toks, &ta);
    let pb = positions(&toks, &tb);
    let same = ta == tb;
    pa.iter().any(|&i| pb.iter().any(|&j| (!same || i != j) && i.abs_diff(j) <= window))
}
