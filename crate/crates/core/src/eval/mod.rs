//! Retrieval and schema metrics, gold files, and the end-to-end benchmark.

mod bench;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::embed;
use crate::schema::{FieldSpec, Schema};
use crate::ssr::ast::{Expr, Projection, Script, Select};
use crate::ssr::{Cell, ResultTable};
use crate::value::{format_number, normalize_text};

pub use bench::{bench_pipeline, evaluate_store, BenchConfig, BenchOutcome, BenchTiming, EvalReport, BENCH_SELECTION, LatencySummary, QueryScore};

/// Cosine above which an induced field counts as matching a gold attribute.
pub const SCHEMA_MATCH_THRESHOLD: f64 = 0.7;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("column mismatch: result has {result:?}, ground truth has {gold:?}")]
    ColumnMismatch { result: Vec<String>, gold: Vec<String> },
    #[error("gold schema is empty")]
    EmptyGold,
    #[error("gold row {row} has {found} cells for {expected} columns")]
    RowArity { row: usize, expected: usize, found: usize },
    #[error("{stage}: {detail}")]
    Stage { stage: &'static str, detail: String },
    #[error("{path}: {detail}")]
    Gold { path: String, detail: String },
}

/// Expected tuples of one query.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Expected {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Expected {
    /// Every row must have one cell per column.
    pub fn new(columns: Vec<String>, rows: Vec<Vec<Cell>>) -> Result<Self, EvalError> {
        for (i, r) in rows.iter().enumerate() {
            if r.len() != columns.len() {
                return Err(EvalError::RowArity { row: i, expected: columns.len(), found: r.len() });
            }
        }
        Ok(Expected { columns, rows })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    /// The result was empty while the ground truth was not; `p` is 1 by
    /// convention only.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

/// A metric value with an optional flag explaining a boundary convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flagged {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

impl Flagged {
    fn plain(value: f64) -> Self {
        Flagged { value, flag: None }
    }
}

fn norm_column(name: &str) -> String {
    name.trim().to_lowercase()
}

/// Comparison key of a cell: numbers canonical, text normalized, lists as
/// sorted sets.
pub fn cell_key(cell: &Cell) -> String {
    fn scalar(s: &str) -> String {
        match s.trim().parse::<f64>() {
            Ok(n) if n.is_finite() => format!("n:{}", format_number(n)),
            _ => format!("t:{}", normalize_text(s)),
        }
    }
    match cell {
        Cell::Null => "null".into(),
        Cell::Number(n) => format!("n:{}", format_number(*n)),
        Cell::Text(s) => scalar(s),
        Cell::List(v) => {
            let set: BTreeSet<String> = v.iter().map(|s| scalar(s)).collect();
            format!("l:[{}]", set.into_iter().collect::<Vec<_>>().join("\u{1f}"))
        }
    }
}

/// Tuple precision, recall and F1 with multiset semantics: each expected
/// tuple can be matched by at most one returned tuple.
pub fn tuple_prf(result: &ResultTable, gt: &Expected) -> Result<Prf, EvalError> {
    let res_cols: Vec<String> = result.column_names().iter().map(|c| norm_column(c)).collect();
    let gold_cols: Vec<String> = gt.columns.iter().map(|c| norm_column(c)).collect();
    let mismatch = || EvalError::ColumnMismatch { result: res_cols.clone(), gold: gold_cols.clone() };
    let (a, b): (BTreeSet<&String>, BTreeSet<&String>) = (res_cols.iter().collect(), gold_cols.iter().collect());
    if a != b || a.len() != res_cols.len() || b.len() != gold_cols.len() {
        return Err(mismatch());
    }
    // gold column order mapped onto result order
    let order: Vec<usize> = res_cols.iter().map(|c| gold_cols.iter().position(|g| g == c).unwrap()).collect();
    let returned: Vec<Vec<String>> = result.rows.iter().map(|r| r.iter().map(cell_key).collect()).collect();
    let expected: Vec<Vec<String>> =
        gt.rows.iter().map(|r| order.iter().map(|&i| cell_key(&r[i])).collect()).collect();
    Ok(prf_counts(&returned, &expected))
}

fn prf_counts<T: Ord + Clone>(returned: &[T], expected: &[T]) -> Prf {
    let mut bag: BTreeMap<&T, usize> = BTreeMap::new();
    for t in expected {
        *bag.entry(t).or_default() += 1;
    }
    let mut hits = 0usize;
    for t in returned {
        if let Some(c) = bag.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                hits += 1;
            }
        }
    }
    match (returned.len(), expected.len()) {
        (0, 0) => Prf { p: 1.0, r: 1.0, f1: 1.0, degenerate: false },
        (0, _) => Prf { p: 1.0, r: 0.0, f1: 0.0, degenerate: true },
        (nt, ng) => {
            let p = hits as f64 / nt as f64;
            let r = if ng == 0 { 1.0 } else { hits as f64 / ng as f64 };
            let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            Prf { p, r, f1, degenerate: false }
        }
    }
}

/// A gold schema attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAttribute {
    pub name: String,
    #[serde(default)]
    pub description: String,
}

impl GoldAttribute {
    fn signature(&self) -> String {
        format!("{} {}", self.name.replace('_', " "), self.description)
    }
}

/// Greedy one-to-one matching by descending cosine; returns matched
/// (induced, gold) index pairs.
pub fn greedy_match(induced: &[String], gold: &[String], threshold: f64) -> Vec<(usize, usize)> {
    let ie: Vec<_> = induced.iter().map(|s| embed(s)).collect();
    let ge: Vec<_> = gold.iter().map(|s| embed(s)).collect();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, a) in ie.iter().enumerate() {
        for (j, b) in ge.iter().enumerate() {
            let c = a.cosine(b);
            if c >= threshold {
                pairs.push((c, i, j));
            }
        }
    }
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    let (mut ui, mut uj) = (BTreeSet::new(), BTreeSet::new());
    let mut out = Vec::new();
    for (_, i, j) in pairs {
        if !ui.contains(&i) && !uj.contains(&j) {
            ui.insert(i);
            uj.insert(j);
            out.push((i, j));
        }
    }
    out
}

fn f1_of_matches(matched: usize, induced: usize, gold: usize) -> f64 {
    if matched == 0 {
        return 0.0;
    }
    let p = matched as f64 / induced as f64;
    let r = matched as f64 / gold as f64;
    2.0 * p * r / (p + r)
}

/// Alignment of an induced schema with a gold schema.
pub fn schema_f1(induced: &Schema, gold: &[GoldAttribute]) -> Result<f64, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::EmptyGold);
    }
    let a: Vec<String> = induced.fields.iter().map(FieldSpec::signature).collect();
    let b: Vec<String> = gold.iter().map(GoldAttribute::signature).collect();
    let m = greedy_match(&a, &b, SCHEMA_MATCH_THRESHOLD);
    Ok(f1_of_matches(m.len(), a.len(), b.len()))
}

fn cohesion_text(f: &FieldSpec) -> String {
    if f.description.trim().is_empty() {
        f.name.replace('_', " ")
    } else {
        f.description.clone()
    }
}

/// Mean pairwise description cosine mapped to [0, 1].
pub fn cohesion(schema: &Schema) -> Flagged {
    let vecs: Vec<_> = schema.fields.iter().map(|f| embed(&cohesion_text(f))).collect();
    if vecs.len() < 2 {
        return Flagged { value: 1.0, flag: Some("single_field".into()) };
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..vecs.len() {
        for j in i + 1..vecs.len() {
            sum += (vecs[i].cosine(&vecs[j]) + 1.0) / 2.0;
            pairs += 1;
        }
    }
    Flagged::plain(sum / pairs as f64)
}

fn select_refs(sel: &Select, refs: &mut BTreeSet<String>, aliases: &mut BTreeSet<String>) {
    fn proj(p: &Projection, refs: &mut BTreeSet<String>, aliases: &mut BTreeSet<String>) {
        match p {
            Projection::Star => {}
            Projection::Column { col, alias } => {
                refs.insert(col.name.clone());
                aliases.extend(alias.clone());
            }
            Projection::Aggregate { arg, alias, .. } => {
                refs.extend(arg.as_ref().map(|c| c.name.clone()));
                aliases.extend(alias.clone());
            }
        }
    }
    fn expr(e: &Expr, refs: &mut BTreeSet<String>, aliases: &mut BTreeSet<String>) {
        match e {
            Expr::And(v) | Expr::Or(v) => v.iter().for_each(|x| expr(x, refs, aliases)),
            Expr::Compare { col, .. } | Expr::In { col, .. } | Expr::Contains { col, .. } => {
                refs.insert(col.name.clone());
            }
            Expr::Extract(x) => {
                aliases.insert(x.alias.clone());
            }
        }
    }
    for p in &sel.projections {
        proj(p, refs, aliases);
    }
    for j in &sel.joins {
        refs.insert(j.left.name.clone());
        refs.insert(j.right.name.clone());
    }
    for c in &sel.conditions {
        expr(c, refs, aliases);
    }
    refs.extend(sel.group_by.iter().map(|c| c.name.clone()));
    for o in &sel.order_by {
        proj(&o.key, refs, aliases);
    }
}

/// Distinct field names referenced by `queries`, without `doc_id`, EXTRACT
/// aliases and projection aliases.
pub fn referenced_fields(queries: &[Script]) -> BTreeSet<String> {
    let mut refs = BTreeSet::new();
    let mut aliases = BTreeSet::new();
    for q in queries {
        for st in &q.statements {
            for (_, sel) in &st.with {
                select_refs(sel, &mut refs, &mut aliases);
            }
            select_refs(&st.select, &mut refs, &mut aliases);
        }
    }
    refs.remove("doc_id");
    refs.retain(|r| !aliases.contains(r));
    refs
}

/// Fraction of referenced fields the schema defines.
pub fn completion(schema: &Schema, queries: &[Script]) -> Flagged {
    let refs = referenced_fields(queries);
    if refs.is_empty() {
        return Flagged { value: 1.0, flag: Some("no_field_references".into()) };
    }
    let have = refs.iter().filter(|r| schema.field(r).is_some()).count();
    Flagged::plain(have as f64 / refs.len() as f64)
}

/// One benchmark query with its expected result. `rows` is `None` when
/// the gold is missing; such queries are skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldQuery {
    pub id: String,
    pub query: String,
    #[serde(default)]
    pub columns: Vec<String>,
    #[serde(default)]
    pub rows: Option<Vec<Vec<serde_json::Value>>>,
}

impl GoldQuery {
    pub fn expected(&self) -> Result<Option<Expected>, EvalError> {
        let Some(rows) = &self.rows else { return Ok(None) };
        let rows = rows.iter().map(|r| r.iter().map(json_cell).collect()).collect();
        Expected::new(self.columns.clone(), rows).map(Some)
    }
}

pub fn json_cell(v: &serde_json::Value) -> Cell {
    use serde_json::Value;
    match v {
        Value::Null => Cell::Null,
        Value::Number(n) => Cell::Number(n.as_f64().unwrap_or(f64::NAN)),
        Value::String(s) => Cell::Text(s.clone()),
        Value::Bool(b) => Cell::Text(b.to_string()),
        Value::Array(a) => Cell::List(
            a.iter()
                .map(|x| match x {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect(),
        ),
        Value::Object(_) => Cell::Text(v.to_string()),
    }
}

/// Per-document gold values: doc_id → field → values.
pub type GoldFields = BTreeMap<String, BTreeMap<String, Vec<String>>>;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub queries: Vec<GoldQuery>,
    pub fields: GoldFields,
    pub schema: Vec<GoldAttribute>,
}

pub const QUERIES_FILE: &str = "queries.json";
pub const FIELDS_FILE: &str = "gold_fields.json";
pub const SCHEMA_FILE: &str = "gold_schema.json";

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, EvalError> {
    let err = |detail: String| EvalError::Gold { path: path.display().to_string(), detail };
    let bytes = std::fs::read(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_slice(&bytes).map_err(|e| err(e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), EvalError> {
    let err = |detail: String| EvalError::Gold { path: path.display().to_string(), detail };
    let mut s = serde_json::to_string_pretty(value).map_err(|e| err(e.to_string()))?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| err(e.to_string()))
}

impl GroundTruth {
    /// Load the three gold files from `dir`. A missing `gold_fields.json`
    /// is treated as empty.
    pub fn load(dir: &Path) -> Result<Self, EvalError> {
        let queries = read_json(&dir.join(QUERIES_FILE))?;
        let schema = read_json(&dir.join(SCHEMA_FILE))?;
        let fpath = dir.join(FIELDS_FILE);
        let fields = if fpath.exists() { read_json(&fpath)? } else { GoldFields::new() };
        let gt = GroundTruth { queries, fields, schema };
        for q in &gt.queries {
            q.expected()?;
        }
        Ok(gt)
    }

    pub fn save(&self, dir: &Path) -> Result<(), EvalError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| EvalError::Gold { path: dir.display().to_string(), detail: e.to_string() })?;
        write_json(&dir.join(QUERIES_FILE), &self.queries)?;
        write_json(&dir.join(FIELDS_FILE), &self.fields)?;
        write_json(&dir.join(SCHEMA_FILE), &self.schema)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{Granularity, Tier, ValueType};
    use crate::ssr::table::Column;
    use crate::ssr::{parse_script, ColumnKind};

    fn table(cols: &[&str], rows: Vec<Vec<Cell>>) -> ResultTable {
        ResultTable {
            columns: cols.iter().map(|c| Column { name: c.to_string(), kind: ColumnKind::Dynamic }).collect(),
            provenance: vec![Vec::new(); rows.len()],
            rows,
        }
    }

    fn t(s: &str) -> Cell {
        Cell::Text(s.into())
    }

    #[test]
    fn prf_examples() {
        let gt = Expected::new(vec!["doc_id".into()], vec![vec![t("a")]]).unwrap();
        let same = tuple_prf(&table(&["doc_id"], vec![vec![t("a")]]), &gt).unwrap();
        assert_eq!((same.p, same.r, same.f1), (1.0, 1.0, 1.0));
        let half = tuple_prf(&table(&["doc_id"], vec![vec![t("a")], vec![t("b")]]), &gt).unwrap();
        assert_eq!((half.p, half.r), (0.5, 1.0));
        assert!((half.f1 - 2.0 / 3.0).abs() < 1e-15);
        let dup = tuple_prf(&table(&["doc_id"], vec![vec![t("a")], vec![t("a")]]), &gt).unwrap();
        assert_eq!(dup.p, 0.5);
    }

    #[test]
    fn prf_empty_conventions() {
        let empty = Expected::new(vec!["x".into()], vec![]).unwrap();
        let none = table(&["x"], vec![]);
        let p = tuple_prf(&none, &empty).unwrap();
        assert_eq!((p.p, p.r, p.f1, p.degenerate), (1.0, 1.0, 1.0, false));
        let gt = Expected::new(vec!["x".into()], vec![vec![t("a")]]).unwrap();
        let p = tuple_prf(&none, &gt).unwrap();
        assert_eq!((p.p, p.r, p.f1, p.degenerate), (1.0, 0.0, 0.0, true));
    }

    #[test]
    fn prf_normalizes_cells_and_columns() {
        let gt = Expected::new(
            vec!["Amount".into(), "court".into()],
            vec![vec![Cell::Number(1200.0), t("High Court")]],
        )
        .unwrap();
        let res = table(&["court", "amount"], vec![vec![t("high  court"), t("1200")]]);
        assert_eq!(tuple_prf(&res, &gt).unwrap().f1, 1.0);
        let bad = table(&["court"], vec![]);
        assert!(matches!(tuple_prf(&bad, &gt), Err(EvalError::ColumnMismatch { .. })));
    }

    fn schema_of(fields: &[(&str, &str)]) -> Schema {
        Schema::tiered(
            "s",
            Granularity::Lite,
            fields
                .iter()
                .map(|(n, d)| FieldSpec::new(n, ValueType::String, Tier::Sem).with_description(d))
                .collect(),
        )
    }

    fn gold_of(fields: &[(&str, &str)]) -> Vec<GoldAttribute> {
        fields.iter().map(|(n, d)| GoldAttribute { name: n.to_string(), description: d.to_string() }).collect()
    }

    #[test]
    fn schema_f1_examples() {
        let f = [("court", "court that heard the case"), ("amount", "money awarded")];
        assert_eq!(schema_f1(&schema_of(&f), &gold_of(&f)).unwrap(), 1.0);
        let other = [("zebra_stripes", "qqq"), ("xylophone", "vvv")];
        assert_eq!(schema_f1(&schema_of(&other), &gold_of(&f)).unwrap(), 0.0);
        assert!(matches!(schema_f1(&schema_of(&f), &[]), Err(EvalError::EmptyGold)));
        let expected = 2.0 * (2.0 / 3.0) * (2.0 / 4.0) / ((2.0 / 3.0) + (2.0 / 4.0));
        assert!((f1_of_matches(2, 3, 4) - expected).abs() < 1e-15);
    }

    #[test]
    fn greedy_match_is_one_to_one() {
        let a = vec!["court".to_string(), "court".to_string()];
        let b = vec!["court".to_string()];
        assert_eq!(greedy_match(&a, &b, 0.7), vec![(0, 0)]);
    }

    #[test]
    fn cohesion_examples() {
        let same = schema_of(&[("a", "the tax court"), ("b", "the tax court"), ("c", "the tax court")]);
        assert!((cohesion(&same).value - 1.0).abs() < 1e-12);
        let one = schema_of(&[("a", "x")]);
        assert_eq!(cohesion(&one), Flagged { value: 1.0, flag: Some("single_field".into()) });
        let three = schema_of(&[("a", "court name"), ("b", "money amount"), ("c", "court amount")]);
        let e: Vec<_> = ["court name", "money amount", "court amount"].iter().map(|s| embed(s)).collect();
        let brute = [(0, 1), (0, 2), (1, 2)].iter().map(|&(i, j)| (e[i].cosine(&e[j]) + 1.0) / 2.0).sum::<f64>() / 3.0;
        assert!((cohesion(&three).value - brute).abs() < 1e-12);
    }

    #[test]
    fn completion_examples() {
        let s = schema_of(&[("court", ""), ("topic", ""), ("amount", "")]);
        let q = |src: &str| parse_script(src).unwrap();
        let only = [q("SELECT court FROM store WHERE topic = 'tax'")];
        assert_eq!(completion(&s, &only).value, 1.0);
        let four = [q("SELECT court, judge FROM store WHERE topic = 'tax' AND amount > 3 \
                      AND EXTRACT(hit, 'contains:x')")];
        assert_eq!(completion(&s, &four).value, 0.75);
        let none = [q("SELECT doc_id FROM store")];
        assert_eq!(completion(&s, &none).flag.as_deref(), Some("no_field_references"));
    }

    #[test]
    fn gold_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let gt = GroundTruth {
            queries: vec![GoldQuery {
                id: "q1".into(),
                query: "SELECT doc_id FROM store".into(),
                columns: vec!["doc_id".into()],
                rows: Some(vec![vec![serde_json::json!("d1")]]),
            }],
            fields: GoldFields::new(),
            schema: gold_of(&[("court", "court")]),
        };
        gt.save(dir.path()).unwrap();
        assert_eq!(GroundTruth::load(dir.path()).unwrap(), gt);
    }
}
