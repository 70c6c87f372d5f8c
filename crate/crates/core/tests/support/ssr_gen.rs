//! Random small stores and grammar-generated queries, with a full-scan
//! oracle that evaluates the parsed query by nested loops over the
//! annotation records. Shared by the core tests and the acceptance suite.

#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strata::annotator::{parse_date, parse_number, AnnotationBatch, AnnotationRecord};
use strata::corpus::{tokenize, Corpus, Document};
use strata::index::{build_store, AnnotationStore};
use strata::schema::{FieldSpec, Granularity, Schema, Tier, ValueType};
use strata::ssr::ast::{AggFunc, ColumnRef, Expr, ExtractSpec, Projection, Statement};
use strata::ssr::{eval_extract, parse_query, Cell};
use strata::value::{format_number, normalize_text, CompareOp, Literal};

const CATS: [&str; 4] = ["Alpha", "beta", "Gamma Court", "delta"];
const WORDS: [&str; 6] = ["tax", "law", "appeal", "merger", "court", "Fraud"];
const OPS: [&str; 6] = ["=", "!=", "<", "<=", ">", ">="];

#[derive(Debug, Clone)]
pub struct Doc {
    pub id: String,
    pub text: String,
    pub values: BTreeMap<String, Vec<String>>,
}

#[derive(Debug)]
pub struct Case {
    pub seed: u64,
    pub fields: Vec<FieldSpec>,
    pub docs: Vec<Doc>,
    pub store: AnnotationStore,
    pub query: String,
}

fn pool() -> Vec<FieldSpec> {
    vec![
        FieldSpec::new("cat", ValueType::Categorical, Tier::Fast),
        FieldSpec::new("num", ValueType::Number, Tier::Fast),
        FieldSpec::new("when", ValueType::Date, Tier::Fast),
        FieldSpec::new("topic", ValueType::String, Tier::Sem),
        FieldSpec::new("tags", ValueType::StringSet, Tier::Sem),
        FieldSpec::new("kind", ValueType::Categorical, Tier::Sem),
        FieldSpec::new("note", ValueType::String, Tier::Detail),
        FieldSpec::new("score", ValueType::Number, Tier::Detail),
    ]
}

fn phrase(rng: &mut ChaCha8Rng, max: usize) -> String {
    let n = rng.gen_range(1..=max);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn date(rng: &mut ChaCha8Rng) -> String {
    format!("{}-{:02}-{:02}", rng.gen_range(2000..2005), rng.gen_range(1..13), rng.gen_range(1..29))
}

fn value(rng: &mut ChaCha8Rng, f: &FieldSpec) -> Vec<String> {
    match f.name.as_str() {
        "cat" | "kind" => vec![CATS.choose(rng).unwrap().to_string()],
        "num" => vec![format_number(rng.gen_range(-5..40) as f64 / if rng.gen_bool(0.2) { 2.0 } else { 1.0 })],
        "score" => {
            let k = rng.gen_range(1..3);
            (0..k).map(|_| format_number(rng.gen_range(0..10) as f64)).collect()
        }
        "when" => vec![date(rng)],
        "topic" | "note" => {
            let k = if rng.gen_bool(0.2) { 2 } else { 1 };
            (0..k).map(|_| phrase(rng, 3)).collect()
        }
        "tags" => {
            let k = rng.gen_range(1..4);
            let mut v: Vec<String> = (0..k).map(|_| WORDS.choose(rng).unwrap().to_lowercase()).collect();
            v.dedup();
            v
        }
        _ => unreachable!(),
    }
}

fn text(rng: &mut ChaCha8Rng) -> String {
    let frags = [
        "the appeal was dismissed.",
        "merger was finally approved.",
        "the merger talks stalled and nothing was approved.",
        "a tax matter.",
        "no further remarks.",
        "Filed on 3 March 2004.",
        "filed on 12 June 2001.",
    ];
    let mut parts = Vec::new();
    for _ in 0..rng.gen_range(1..4) {
        if rng.gen_bool(0.35) {
            parts.push(format!("sentenced to {} years.", rng.gen_range(1..12)));
        } else {
            parts.push(frags.choose(rng).unwrap().to_string());
        }
    }
    parts.join(" ")
}

pub fn build(fields: &[FieldSpec], docs: &[Doc]) -> AnnotationStore {
    let corpus =
        Corpus::from_documents(docs.iter().map(|d| Document::new(d.id.clone(), d.text.clone())).collect()).unwrap();
    let schema = Schema::tiered("rand", Granularity::Std, fields.to_vec());
    let records = docs
        .iter()
        .map(|d| AnnotationRecord {
            doc_id: d.id.clone(),
            values: d.values.clone(),
            annotator_id: "gen".into(),
            warnings: vec![],
            elapsed_seconds: 0.0,
        })
        .collect();
    let batch = AnnotationBatch { schema_id: "rand".into(), records, failures: vec![], elapsed_seconds: 0.0 };
    build_store(&batch, &schema, &corpus, "2000-01-01T00:00:00Z").unwrap()
}

pub fn random_store(rng: &mut ChaCha8Rng) -> (Vec<FieldSpec>, Vec<Doc>) {
    let mut fields = pool();
    fields.shuffle(rng);
    fields.truncate(rng.gen_range(1..=6));
    let n = rng.gen_range(1..=64);
    let docs = (0..n)
        .map(|i| {
            let mut values = BTreeMap::new();
            for f in &fields {
                if rng.gen_bool(0.8) {
                    values.insert(f.name.clone(), value(rng, f));
                }
            }
            Doc { id: format!("doc{i:02}"), text: text(rng), values }
        })
        .collect();
    (fields, docs)
}

struct QGen<'a> {
    rng: ChaCha8Rng,
    fields: &'a [FieldSpec],
    n_docs: usize,
    aliases: usize,
}

impl QGen<'_> {
    fn q(&self, qual: Option<&str>, name: &str) -> String {
        match qual {
            Some(q) => format!("{q}.{name}"),
            None => name.to_string(),
        }
    }

    fn literal(&mut self, f: Option<&FieldSpec>) -> String {
        let rng = &mut self.rng;
        match f.map(|f| f.name.as_str()) {
            None => format!("'doc{:02}'", rng.gen_range(0..self.n_docs + 2)),
            Some("cat" | "kind") => {
                let v = if rng.gen_bool(0.85) { CATS.choose(rng).unwrap().to_string() } else { "omega".into() };
                let v = if rng.gen_bool(0.5) { v.to_uppercase() } else { v };
                format!("'{v}'")
            }
            Some("num") => format_number(rng.gen_range(-6..42) as f64 / if rng.gen_bool(0.1) { 2.0 } else { 1.0 }),
            Some("score") => format!("{}", rng.gen_range(-1..11)),
            Some("when") => format!("'{}'", date(rng)),
            Some(_) => format!("'{}'", phrase(rng, 2)),
        }
    }

    fn leaf(&mut self, qual: Option<&str>) -> String {
        let pick = self.rng.gen_range(0..=self.fields.len());
        let f = if pick == self.fields.len() || self.fields.is_empty() { None } else { Some(self.fields[pick].clone()) };
        let name = f.as_ref().map_or("doc_id".to_string(), |f| f.name.clone());
        let col = self.q(qual, &name);
        let r: f64 = self.rng.gen();
        let text_like = f.as_ref().is_some_and(|f| {
            matches!(f.value_type, ValueType::String | ValueType::StringSet | ValueType::Categorical)
        });
        if r < 0.15 && text_like {
            return format!("{col} CONTAINS '{}'", phrase(&mut self.rng, 2));
        }
        if r < 0.3 {
            let k = self.rng.gen_range(1..4);
            let lits: Vec<String> = (0..k).map(|_| self.literal(f.as_ref())).collect();
            return format!("{col} IN ({})", lits.join(", "));
        }
        let op = *OPS.choose(&mut self.rng).unwrap();
        format!("{col} {op} {}", self.literal(f.as_ref()))
    }

    fn extract(&mut self, qual: Option<&str>, allow_cmp: bool) -> (String, String) {
        self.aliases += 1;
        let alias = format!("x{}", self.aliases);
        let target = self.q(qual, &alias);
        let (cond, cmp) = match self.rng.gen_range(0..5) {
            0 => ("contains:appeal".to_string(), None),
            1 => (
                r"regex:sentenced to (\d+) years".to_string(),
                Some(format!("{} {}", OPS.choose(&mut self.rng).unwrap(), self.rng.gen_range(0..12))),
            ),
            2 => (format!("near:merger,approved,{}", self.rng.gen_range(1..8)), None),
            3 => (
                r"regex:(?i)filed on (\d+ \w+ \d{4})".to_string(),
                Some(format!("{} '{}'", OPS.choose(&mut self.rng).unwrap(), date(&mut self.rng))),
            ),
            _ => ("regex:ta[xz]".to_string(), None),
        };
        let mut s = format!("EXTRACT({target}, '{cond}')");
        if allow_cmp && self.rng.gen_bool(0.7) {
            if let Some(c) = cmp {
                s = format!("{s} AND {target} {c}");
            }
        }
        (s, target)
    }

    fn pred(&mut self, quals: &[Option<&str>], top: bool, extracts: &mut Vec<String>) -> String {
        let qual = *quals.choose(&mut self.rng).unwrap();
        let r: f64 = self.rng.gen();
        if r < 0.2 {
            let (s, t) = self.extract(qual, top);
            extracts.push(t);
            s
        } else if r < 0.4 {
            let a = self.pred(quals, false, extracts);
            let b = self.pred(quals, false, extracts);
            if self.rng.gen_bool(0.2) {
                let c = self.pred(quals, false, extracts);
                format!("({a} OR {b} AND {c})")
            } else {
                format!("({a} OR {b})")
            }
        } else {
            self.leaf(qual)
        }
    }

    fn where_clause(&mut self, quals: &[Option<&str>], extracts: &mut Vec<String>) -> String {
        let k = self.rng.gen_range(0..4);
        let preds: Vec<String> = (0..k).map(|_| self.pred(quals, true, extracts)).collect();
        if preds.is_empty() {
            String::new()
        } else {
            format!(" WHERE {}", preds.join(" AND "))
        }
    }
}

fn orderable(f: &FieldSpec) -> bool {
    f.value_type != ValueType::StringSet
}

pub fn random_query(rng: ChaCha8Rng, fields: &[FieldSpec], n_docs: usize) -> String {
    let mut g = QGen { rng, fields, n_docs, aliases: 0 };
    let mode = g.rng.gen_range(0..20);
    let mut extracts = Vec::new();
    if mode < 3 {
        // Self join on a shared field.
        let keys: Vec<String> = std::iter::once("doc_id".to_string())
            .chain(fields.iter().filter(|f| f.name != "note").map(|f| f.name.clone()))
            .collect();
        let k = keys.choose(&mut g.rng).unwrap().clone();
        let w = g.where_clause(&[Some("a"), Some("b")], &mut extracts);
        let extra = fields.choose(&mut g.rng).map(|f| format!(", b.{}", f.name)).unwrap_or_default();
        let proj = format!("a.doc_id, b.doc_id{extra}");
        let order = if g.rng.gen_bool(0.5) {
            format!(" ORDER BY a.doc_id DESC, b.doc_id LIMIT {}", g.rng.gen_range(0..20))
        } else {
            String::new()
        };
        return format!("SELECT {proj} FROM store AS a JOIN store AS b ON a.{k} = b.{k}{w}{order}");
    }
    let w = g.where_clause(&[None], &mut extracts);
    if mode < 6 {
        let groupable: Vec<&FieldSpec> =
            fields.iter().filter(|f| matches!(f.value_type, ValueType::Categorical | ValueType::Date)).collect();
        let mut aggs = vec!["COUNT(*)".to_string()];
        for f in fields {
            match f.value_type {
                ValueType::Number => {
                    aggs.push(format!("SUM({})", f.name));
                    aggs.push(format!("MIN({})", f.name));
                    aggs.push(format!("AVG({})", f.name));
                }
                ValueType::Date | ValueType::Categorical | ValueType::String => aggs.push(format!("MAX({})", f.name)),
                ValueType::StringSet => aggs.push(format!("COUNT({})", f.name)),
            }
        }
        aggs.shuffle(&mut g.rng);
        aggs.truncate(g.rng.gen_range(1..4));
        return match groupable.choose(&mut g.rng) {
            Some(f) if g.rng.gen_bool(0.8) => format!(
                "SELECT {}, {} FROM store{w} GROUP BY {} ORDER BY {} {}",
                f.name,
                aggs.join(", "),
                f.name,
                f.name,
                if g.rng.gen_bool(0.5) { "DESC" } else { "ASC" }
            ),
            _ => format!("SELECT {} FROM store{w}", aggs.join(", ")),
        };
    }
    let mut proj = vec!["doc_id".to_string()];
    for f in fields {
        if g.rng.gen_bool(0.4) {
            proj.push(f.name.clone());
        }
    }
    if let Some(x) = extracts.first() {
        if g.rng.gen_bool(0.5) {
            proj.push(x.clone());
        }
    }
    let mut order = String::new();
    if g.rng.gen_bool(0.3) {
        let candidates: Vec<&FieldSpec> = fields.iter().filter(|f| orderable(f) && proj.contains(&f.name)).collect();
        let first = candidates.choose(&mut g.rng).map(|f| format!("{} DESC, ", f.name)).unwrap_or_default();
        order = format!(" ORDER BY {first}doc_id LIMIT {}", g.rng.gen_range(0..10));
    }
    if g.rng.gen_bool(0.05) {
        proj = vec!["*".into()];
        order.clear();
    }
    format!("SELECT {} FROM store{w}{order}", proj.join(", "))
}

pub fn case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (fields, docs) = random_store(&mut rng);
    let store = build(&fields, &docs);
    let query = random_query(ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9), &fields, docs.len());
    Case { seed, fields, docs, store, query }
}

// ---------------------------------------------------------------------------
// Oracle

struct Oracle<'a> {
    fields: &'a [FieldSpec],
    docs: &'a [Doc],
    quals: Vec<String>,
    specs: Vec<(usize, ExtractSpec)>,
}

fn spec_list(e: &Expr, out: &mut Vec<ExtractSpec>) {
    match e {
        Expr::And(xs) | Expr::Or(xs) => xs.iter().for_each(|x| spec_list(x, out)),
        Expr::Extract(x) => out.push(x.clone()),
        _ => {}
    }
}

fn num_of(s: &str) -> Option<f64> {
    s.parse().ok().or_else(|| parse_number(s).and_then(|d| d.parse().ok()))
}

fn holds_cmp(vt: Option<ValueType>, values: &[String], op: CompareOp, lit: &Literal) -> bool {
    let ord = |o: Ordering| op.holds(o);
    match vt {
        None => {
            let l = match lit {
                Literal::Str(s) => s.clone(),
                Literal::Num(n) => format_number(*n),
            };
            values.iter().any(|v| ord(v.as_str().cmp(&l)))
        }
        Some(ValueType::Number) => {
            let m = match lit {
                Literal::Num(n) => *n,
                Literal::Str(s) => num_of(s).unwrap(),
            };
            values.iter().filter_map(|v| num_of(v)).any(|v| ord(v.partial_cmp(&m).unwrap()))
        }
        Some(ValueType::Date) => {
            let Literal::Str(s) = lit else { unreachable!() };
            let l = parse_date(s, true).unwrap();
            values.iter().any(|v| ord(v.as_str().cmp(&l)))
        }
        Some(_) => {
            let l = match lit {
                Literal::Str(s) => normalize_text(s),
                Literal::Num(n) => format_number(*n),
            };
            values.iter().any(|v| ord(normalize_text(v).cmp(&l)))
        }
    }
}

fn cell_cmp(a: &Cell, b: &Cell) -> Ordering {
    fn rank(c: &Cell) -> u8 {
        match c {
            Cell::Null => 0,
            Cell::Number(_) => 1,
            Cell::Text(_) => 2,
            Cell::List(_) => 3,
        }
    }
    match (a, b) {
        (Cell::Number(x), Cell::Number(y)) => x.partial_cmp(y).unwrap(),
        (Cell::Text(x), Cell::Text(y)) => x.cmp(y),
        (Cell::List(x), Cell::List(y)) => x.cmp(y),
        _ => rank(a).cmp(&rank(b)),
    }
}

impl Oracle<'_> {
    fn binding(&self, c: &ColumnRef) -> usize {
        match &c.qualifier {
            Some(q) => self.quals.iter().position(|b| b == q).unwrap(),
            None => 0,
        }
    }

    fn extract_of(&self, c: &ColumnRef) -> Option<&(usize, ExtractSpec)> {
        self.specs.iter().find(|(b, s)| s.alias == c.name && (c.qualifier.is_none() || c.qualifier.as_deref() == Some(&self.quals[*b])))
    }

    fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }

    fn raw(&self, c: &ColumnRef, t: &[usize]) -> (Option<ValueType>, Vec<String>) {
        let d = &self.docs[t[self.binding(c)]];
        if c.name == "doc_id" {
            return (None, vec![d.id.clone()]);
        }
        let f = self.field(&c.name).unwrap();
        (Some(f.value_type), d.values.get(&c.name).cloned().unwrap_or_default())
    }

    fn cell(&self, c: &ColumnRef, t: &[usize]) -> Cell {
        if let Some((b, s)) = self.extract_of(c) {
            return eval_extract(s, &self.docs[t[*b]].text).1.unwrap_or(Cell::Null);
        }
        let (vt, vals) = self.raw(c, t);
        if vals.is_empty() {
            return Cell::Null;
        }
        match vt {
            Some(ValueType::StringSet) => Cell::List(vals),
            Some(ValueType::Number) => Cell::Number(vals[0].parse().unwrap()),
            _ => Cell::Text(vals[0].clone()),
        }
    }

    fn eval(&self, e: &Expr, t: &[usize]) -> bool {
        match e {
            Expr::And(xs) => xs.iter().all(|x| self.eval(x, t)),
            Expr::Or(xs) => xs.iter().any(|x| self.eval(x, t)),
            Expr::Extract(x) => {
                let b = x.qualifier.as_ref().map_or(0, |q| self.quals.iter().position(|b| b == q).unwrap());
                eval_extract(x, &self.docs[t[b]].text).0
            }
            Expr::Compare { col, op, value } => {
                let (vt, vals) = self.raw(col, t);
                holds_cmp(vt, &vals, *op, value)
            }
            Expr::In { col, values } => {
                let (vt, vals) = self.raw(col, t);
                values.iter().any(|v| holds_cmp(vt, &vals, CompareOp::Eq, v))
            }
            Expr::Contains { col, text } => {
                let (_, vals) = self.raw(col, t);
                let p = tokenize(text);
                !p.is_empty() && vals.iter().any(|v| tokenize(v).windows(p.len()).any(|w| w == p.as_slice()))
            }
        }
    }

    fn join_keys(&self, c: &ColumnRef, t: &[usize]) -> Vec<String> {
        let (vt, vals) = self.raw(c, t);
        vals.iter()
            .map(|v| match vt {
                None | Some(ValueType::Date) => v.clone(),
                Some(ValueType::Number) => format_number(v.parse().unwrap()),
                Some(_) => normalize_text(v),
            })
            .collect()
    }
}

/// Rows the query must return, evaluated by full scan.
pub fn oracle(fields: &[FieldSpec], docs: &[Doc], st: &Statement) -> Vec<Vec<Cell>> {
    let sel = &st.select;
    let mut docs: Vec<Doc> = docs.to_vec();
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    let quals: Vec<String> = std::iter::once(&sel.source)
        .chain(sel.joins.iter().map(|j| &j.source))
        .map(|s| s.binding().to_string())
        .collect();
    let mut specs = Vec::new();
    sel.conditions.iter().for_each(|c| spec_list(c, &mut specs));
    let specs = specs
        .into_iter()
        .map(|s| (s.qualifier.as_ref().map_or(0, |q| quals.iter().position(|b| b == q).unwrap()), s))
        .collect();
    let o = Oracle { fields, docs: &docs, quals, specs };

    // Nested loops in (left, right) order.
    let mut tuples: Vec<Vec<usize>> = (0..docs.len()).map(|i| vec![i]).collect();
    for j in &sel.joins {
        let mut next = Vec::new();
        for t in &tuples {
            for r in 0..docs.len() {
                let mut t2 = t.clone();
                t2.push(r);
                let lk = o.join_keys(&j.left, &t2);
                let rk = o.join_keys(&j.right, &t2);
                if lk.iter().any(|k| rk.contains(k)) {
                    next.push(t2);
                }
            }
        }
        tuples = next;
    }
    tuples.retain(|t| sel.conditions.iter().all(|c| o.eval(c, t)));

    let grouped = !sel.group_by.is_empty() || sel.projections.iter().any(|p| matches!(p, Projection::Aggregate { .. }));
    let mut cols: Vec<Projection> = Vec::new();
    for p in &sel.projections {
        if let Projection::Star = p {
            let mut names: Vec<String> = fields.iter().map(|f| f.name.clone()).collect();
            names.sort();
            cols.push(Projection::Column { col: ColumnRef::new("doc_id"), alias: None });
            cols.extend(names.iter().map(|n| Projection::Column { col: ColumnRef::new(n), alias: None }));
        } else {
            cols.push(p.clone());
        }
    }
    let mut rows: Vec<Vec<Cell>> = Vec::new();
    if grouped {
        let mut keys: Vec<Vec<Cell>> = Vec::new();
        let mut members: Vec<Vec<&Vec<usize>>> = Vec::new();
        for t in &tuples {
            let k: Vec<Cell> = sel.group_by.iter().map(|c| o.cell(c, t)).collect();
            match keys.iter().position(|x| x == &k) {
                Some(i) => members[i].push(t),
                None => {
                    keys.push(k);
                    members.push(vec![t]);
                }
            }
        }
        if sel.group_by.is_empty() && keys.is_empty() {
            keys.push(vec![]);
            members.push(vec![]);
        }
        for (k, ms) in keys.iter().zip(&members) {
            let row = cols
                .iter()
                .map(|p| match p {
                    Projection::Column { col, .. } => k[sel.group_by.iter().position(|g| g == col).unwrap()].clone(),
                    Projection::Aggregate { func, arg, .. } => {
                        let Some(a) = arg else { return Cell::Number(ms.len() as f64) };
                        let cells: Vec<Cell> = ms.iter().map(|t| o.cell(a, t)).filter(|c| *c != Cell::Null).collect();
                        match func {
                            AggFunc::Count => Cell::Number(cells.len() as f64),
                            AggFunc::Sum | AggFunc::Avg => {
                                let nums: Vec<f64> =
                                    cells.iter().filter_map(|c| if let Cell::Number(n) = c { Some(*n) } else { None }).collect();
                                if nums.is_empty() {
                                    Cell::Null
                                } else {
                                    let s: f64 = nums.iter().sum();
                                    Cell::Number(if *func == AggFunc::Sum { s } else { s / nums.len() as f64 })
                                }
                            }
                            AggFunc::Min => cells.iter().cloned().reduce(|a, b| if cell_cmp(&b, &a).is_lt() { b } else { a }).unwrap_or(Cell::Null),
                            AggFunc::Max => cells.iter().cloned().reduce(|a, b| if cell_cmp(&b, &a).is_ge() { b } else { a }).unwrap_or(Cell::Null),
                        }
                    }
                    Projection::Star => unreachable!(),
                })
                .collect();
            rows.push(row);
        }
    } else {
        for t in &tuples {
            rows.push(
                cols.iter()
                    .map(|p| match p {
                        Projection::Column { col, .. } => o.cell(col, t),
                        _ => unreachable!(),
                    })
                    .collect(),
            );
        }
    }
    if !sel.order_by.is_empty() {
        let idx: Vec<(usize, bool)> = sel
            .order_by
            .iter()
            .map(|it| {
                let pos = cols.iter().position(|p| match (p, &it.key) {
                    (Projection::Column { col: a, .. }, Projection::Column { col: b, .. }) => a == b,
                    (Projection::Aggregate { func: f1, arg: a1, .. }, Projection::Aggregate { func: f2, arg: a2, .. }) => {
                        f1 == f2 && a1 == a2
                    }
                    _ => false,
                });
                (pos.expect("order key is projected"), it.desc)
            })
            .collect();
        rows.sort_by(|a, b| {
            for &(c, desc) in &idx {
                let o = cell_cmp(&a[c], &b[c]);
                let o = if desc { o.reverse() } else { o };
                if o != Ordering::Equal {
                    return o;
                }
            }
            Ordering::Equal
        });
    }
    if let Some(l) = sel.limit {
        rows.truncate(l);
    }
    rows
}

fn render(rows: &[Vec<Cell>]) -> Vec<Vec<String>> {
    rows.iter().map(|r| r.iter().map(Cell::render).collect()).collect()
}

/// Execute the case's query and compare with the oracle; `Err` explains
/// the first disagreement.
pub fn check(c: &Case) -> Result<(strata::ssr::LatencyProfile, usize), String> {
    let st = parse_query(&c.query).map_err(|e| format!("seed {}: parse {e}: {}", c.seed, c.query))?;
    let p = strata::ssr::plan(&st.select, &c.store).map_err(|e| format!("seed {}: plan {e}: {}", c.seed, c.query))?;
    let (table, prof) = strata::ssr::execute(&p, &c.store).map_err(|e| format!("seed {}: exec {e}", c.seed))?;
    let want = render(&oracle(&c.fields, &c.docs, &st));
    let mut got = table.tuples();
    if table.columns.len() != st.select.projections.len() && !c.query.contains('*') {
        return Err(format!("seed {}: column count {} for {}", c.seed, table.columns.len(), c.query));
    }
    let mut want_sorted = want.clone();
    if st.select.order_by.is_empty() {
        got.sort();
        want_sorted.sort();
    }
    if got != want_sorted {
        return Err(format!(
            "seed {}: {}\n  engine {:?}\n  oracle {:?}\n{}",
            c.seed,
            c.query,
            got,
            want_sorted,
            p.explain()
        ));
    }
    if prof.extract_invocations > prof.candidate_count * p.extract_count() {
        return Err(format!("seed {}: {} invocations for {} candidates", c.seed, prof.extract_invocations, prof.candidate_count));
    }
    Ok((prof, want.len()))
}
