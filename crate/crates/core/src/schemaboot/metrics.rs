//! Quality components of a schema and their aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SchemabootError;
use crate::corpus::embed;
use crate::schema::{FieldSpec, ValueType};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for QualityWeights {
    fn default() -> Self {
        QualityWeights { alpha: 0.25, beta: 0.25, gamma: 0.25, delta: 0.25 }
    }
}

impl QualityWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64, delta: f64) -> Result<Self, SchemabootError> {
        let w = QualityWeights { alpha, beta, gamma, delta };
        w.check()?;
        Ok(w)
    }

    pub fn check(&self) -> Result<(), SchemabootError> {
        let parts = [self.alpha, self.beta, self.gamma, self.delta];
        let sum: f64 = parts.iter().sum();
        if parts.iter().any(|w| !w.is_finite() || *w < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(SchemabootError::WeightsInvalid(parts));
        }
        Ok(())
    }
}

/// The four components of Q, each in [0, 1].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub cov: f64,
    pub disc: f64,
    pub cons: f64,
    #[serde(rename = "match")]
    pub match_: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub cov: f64,
    pub disc: f64,
    pub cons: f64,
    #[serde(rename = "match")]
    pub match_: f64,
    pub q: f64,
    pub weights: QualityWeights,
    pub t_annot_mean_seconds: f64,
    pub store_size_ratio: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl QualityReport {
    /// Recompute Q from the stored components and weights.
    pub fn recompute_q(&self) -> f64 {
        let w = &self.weights;
        w.alpha * self.cov + w.beta * self.disc + w.gamma * self.cons + w.delta * self.match_
    }
}

pub fn quality(
    weights: &QualityWeights,
    c: Components,
    t_annot_mean_seconds: f64,
    store_size_ratio: f64,
    flags: Vec<String>,
) -> Result<QualityReport, SchemabootError> {
    weights.check()?;
    let mut r = QualityReport {
        cov: c.cov,
        disc: c.disc,
        cons: c.cons,
        match_: c.match_,
        q: 0.0,
        weights: *weights,
        t_annot_mean_seconds,
        store_size_ratio,
        flags,
    };
    r.q = r.recompute_q();
    Ok(r)
}

/// Fraction of documents on which at least `theta` of the fields are
/// populated. `populated[f][d]` says whether field `f` has a value in doc `d`.
pub fn coverage(populated: &[Vec<bool>], docs: usize, theta: f64) -> f64 {
    if docs == 0 {
        return 0.0;
    }
    if populated.is_empty() {
        return 0.0;
    }
    let need = theta * populated.len() as f64;
    let covered = (0..docs)
        .filter(|&d| {
            let hit = populated.iter().filter(|f| f[d]).count();
            hit > 0 && hit as f64 + 1e-12 >= need
        })
        .count();
    covered as f64 / docs as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kappa {
    pub kappa: f64,
    /// Every rating fell in a single category, where κ is undefined.
    pub degenerate: bool,
}

impl Kappa {
    /// κ clamped into [0, 1] for use inside Q.
    pub fn clamped(&self) -> f64 {
        self.kappa.clamp(0.0, 1.0)
    }
}

/// Fleiss' κ of an items × categories count table with a constant number
/// of raters per item.
pub fn fleiss_kappa(table: &[Vec<usize>]) -> Result<Kappa, SchemabootError> {
    let Some(first) = table.first() else {
        return Err(SchemabootError::InvalidSample("no items".into()));
    };
    let n: usize = first.iter().sum();
    let k = first.len();
    if n < 2 {
        return Err(SchemabootError::InvalidSample("fewer than two raters".into()));
    }
    if table.iter().any(|r| r.len() != k || r.iter().sum::<usize>() != n) {
        return Err(SchemabootError::InvalidSample("rows disagree on raters or categories".into()));
    }
    let items = table.len() as f64;
    let n_f = n as f64;
    let p_bar = table
        .iter()
        .map(|r| (r.iter().map(|&c| (c * c) as f64).sum::<f64>() - n_f) / (n_f * (n_f - 1.0)))
        .sum::<f64>()
        / items;
    let p_e: f64 = (0..k)
        .map(|j| {
            let p = table.iter().map(|r| r[j]).sum::<usize>() as f64 / (items * n_f);
            p * p
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(Kappa { kappa: 1.0, degenerate: true });
    }
    Ok(Kappa { kappa: (p_bar - p_e) / (1.0 - p_e), degenerate: false })
}

/// κ over raw ratings: `ratings[item][rater]` is any comparable category
/// label. Categories are shared across items.
pub fn fleiss_kappa_ratings<T: Ord + Clone>(ratings: &[Vec<T>]) -> Result<Kappa, SchemabootError> {
    let mut ids: BTreeMap<T, usize> = BTreeMap::new();
    for r in ratings.iter().flatten() {
        let next = ids.len();
        ids.entry(r.clone()).or_insert(next);
    }
    let table: Vec<Vec<usize>> = ratings
        .iter()
        .map(|item| {
            let mut row = vec![0; ids.len()];
            for r in item {
                row[ids[r]] += 1;
            }
            row
        })
        .collect();
    fleiss_kappa(&table)
}

fn entropy(counts: impl IntoIterator<Item = usize>) -> f64 {
    let counts: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    counts
        .iter()
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.log2()
        })
        .sum()
}

/// Information gain in bits of a bins × labels contingency table, and the
/// gain normalized by the label entropy (0 when the labels are constant).
pub fn information_gain_table(table: &[Vec<usize>]) -> (f64, f64) {
    let k = table.iter().map(Vec::len).max().unwrap_or(0);
    let labels = (0..k).map(|j| table.iter().map(|r| r.get(j).copied().unwrap_or(0)).sum::<usize>());
    let h = entropy(labels);
    let n: usize = table.iter().flatten().sum();
    if n == 0 || h == 0.0 {
        return (0.0, 0.0);
    }
    let cond: f64 = table
        .iter()
        .map(|r| {
            let m: usize = r.iter().sum();
            m as f64 / n as f64 * entropy(r.iter().copied())
        })
        .sum();
    let ig = (h - cond).max(0.0);
    (ig, (ig / h).min(1.0))
}

/// Information gain of a bin assignment against cluster labels.
pub fn information_gain<B: Ord, L: Ord>(pairs: impl IntoIterator<Item = (B, L)>) -> (f64, f64) {
    let rows: Vec<(B, L)> = pairs.into_iter().collect();
    let labels: BTreeMap<&L, usize> = {
        let mut set: Vec<&L> = rows.iter().map(|(_, l)| l).collect();
        set.sort();
        set.dedup();
        set.into_iter().enumerate().map(|(i, l)| (l, i)).collect()
    };
    let mut bins: BTreeMap<&B, Vec<usize>> = BTreeMap::new();
    for (b, l) in &rows {
        bins.entry(b).or_insert_with(|| vec![0; labels.len()])[labels[l]] += 1;
    }
    let table: Vec<Vec<usize>> = bins.into_values().collect();
    information_gain_table(&table)
}

/// Bin of one document's values for the information-gain estimate.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Bin {
    Null,
    Value(String),
    Quartile(u8),
    Other,
}

/// Bin every document's values of a field: categorical values as-is,
/// numbers and dates into quartiles, strings into the five most frequent
/// values plus "other" and "absent".
pub fn bin_values(field: &FieldSpec, values: &[Vec<String>]) -> Vec<Bin> {
    match field.value_type {
        ValueType::Categorical => values
            .iter()
            .map(|v| v.first().map_or(Bin::Null, |s| Bin::Value(s.clone())))
            .collect(),
        ValueType::Number | ValueType::Date => {
            let key = |s: &str| -> Option<crate::value::Key> { crate::value::stored_key(field.value_type, s) };
            let mut present: Vec<crate::value::Key> =
                values.iter().filter_map(|v| v.first().and_then(|s| key(s))).collect();
            present.sort();
            if present.is_empty() {
                return vec![Bin::Null; values.len()];
            }
            let m = present.len();
            let cuts: Vec<&crate::value::Key> = (1..4).map(|q| &present[(m * q / 4).min(m - 1)]).collect();
            values
                .iter()
                .map(|v| match v.first().and_then(|s| key(s)) {
                    None => Bin::Null,
                    Some(k) => Bin::Quartile(cuts.iter().filter(|c| k >= ***c).count() as u8),
                })
                .collect()
        }
        ValueType::String | ValueType::StringSet => {
            let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
            for v in values {
                let mut seen: Vec<&str> = v.iter().map(String::as_str).collect();
                seen.sort_unstable();
                seen.dedup();
                for s in seen {
                    *freq.entry(s).or_default() += 1;
                }
            }
            let mut top: Vec<(&str, usize)> = freq.into_iter().collect();
            top.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
            top.truncate(5);
            values
                .iter()
                .map(|v| {
                    if v.is_empty() {
                        return Bin::Null;
                    }
                    top.iter()
                        .find(|(t, _)| v.iter().any(|s| s == t))
                        .map_or(Bin::Other, |(t, _)| Bin::Value(t.to_string()))
                })
                .collect()
        }
    }
}

/// Mean over queries of the best field-signature cosine, mapped to [0, 1].
/// `None` when there is no history.
pub fn match_score(fields: &[FieldSpec], history: &[String]) -> Option<f64> {
    if history.is_empty() {
        return None;
    }
    if fields.is_empty() {
        return Some(0.0);
    }
    let sigs: Vec<_> = fields.iter().map(|f| embed(&f.signature())).collect();
    let total: f64 = history
        .iter()
        .map(|q| {
            let e = embed(q);
            let best = sigs.iter().map(|s| e.cosine(s)).fold(f64::NEG_INFINITY, f64::max);
            (best + 1.0) / 2.0
        })
        .sum();
    Some(total / history.len() as f64)
}
