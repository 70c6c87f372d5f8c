//! Planning and execution.
//!
//! Per source, conjuncts that touch only that source are pushed down.
//! Stage 1 resolves schema constraints: index-backed ones in ascending
//! order of their exact index counts, then scanned ones on the
//! survivors. Stage 2 runs every EXTRACT of the source on every stage-1
//! survivor, cheapest kind first, and filters. Sources are then combined
//! by inner hash joins, remaining conjuncts are applied to the joined
//! rows, and the result is projected, grouped, ordered and limited.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ast::*;
use super::extract::eval_extract;
use super::table::{phrase_in, Cell, CellTest, Column, ColumnKind, ResultTable};
use super::SsrError;
use crate::corpus::tokenize;
use crate::index::{AnnotationStore, FastPredicate, SemMatch};
use crate::schema::{FieldSpec, Tier, ValueType};
use crate::value::{format_number, intersect, literal_key, normalize_text, union, CompareOp, DocSet, Key, Literal};

/// Name under which queries refer to the annotation store.
pub const STORE_NAME: &str = "store";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyProfile {
    /// Stage 1: schema constraints over the indexes.
    pub l_index_seconds: f64,
    /// Documents surviving stage 1, summed over store sources.
    pub candidate_count: usize,
    pub extract_invocations: usize,
    pub l_extract_total_seconds: f64,
    pub total_seconds: f64,
}

/// Temp tables visible to a statement.
#[derive(Debug, Clone, Default)]
pub struct Env {
    temps: BTreeMap<String, Arc<ResultTable>>,
}

impl Env {
    pub fn new() -> Self {
        Env::default()
    }

    pub fn insert(&mut self, name: &str, table: ResultTable) -> Result<(), SsrError> {
        if name.eq_ignore_ascii_case(STORE_NAME) || self.temps.contains_key(name) {
            return Err(SsrError::Semantic(format!("temp table name `{name}` is already in use")));
        }
        self.temps.insert(name.to_string(), Arc::new(table));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ResultTable> {
        self.temps.get(name).map(Arc::as_ref)
    }
}

#[derive(Debug, Clone)]
enum SourceKind {
    Store,
    Temp(Arc<ResultTable>),
}

#[derive(Debug, Clone, PartialEq)]
enum Slot {
    DocId,
    Field(FieldSpec),
    TempCol(usize, ColumnKind),
    /// Position in the owning binding's extract list.
    Extract(usize),
}

#[derive(Debug, Clone, PartialEq)]
struct RCol {
    binding: usize,
    slot: Slot,
    display: String,
}

impl RCol {
    fn kind(&self) -> ColumnKind {
        match &self.slot {
            Slot::DocId => ColumnKind::DocId,
            Slot::Field(f) => ColumnKind::Field(f.value_type),
            Slot::TempCol(_, k) => *k,
            Slot::Extract(_) => ColumnKind::Dynamic,
        }
    }
}

#[derive(Debug, Clone)]
enum LeafKind {
    Cmp(CompareOp, Literal, CellTest),
    In(Vec<Literal>, Vec<CellTest>),
    Contains(String, Vec<String>),
}

#[derive(Debug, Clone)]
enum RExpr {
    And(Vec<RExpr>),
    Or(Vec<RExpr>),
    Leaf { col: RCol, kind: LeafKind },
    Extract { binding: usize, slot: usize },
}

impl RExpr {
    fn bindings(&self, out: &mut BTreeSet<usize>) {
        match self {
            RExpr::And(xs) | RExpr::Or(xs) => xs.iter().for_each(|x| x.bindings(out)),
            RExpr::Leaf { col, .. } => {
                out.insert(col.binding);
            }
            RExpr::Extract { binding, .. } => {
                out.insert(*binding);
            }
        }
    }

    fn has_extract(&self) -> bool {
        match self {
            RExpr::And(xs) | RExpr::Or(xs) => xs.iter().any(RExpr::has_extract),
            RExpr::Leaf { col, .. } => matches!(col.slot, Slot::Extract(_)),
            RExpr::Extract { .. } => true,
        }
    }
}

#[derive(Debug, Clone)]
struct Stage1Item {
    expr: RExpr,
    text: String,
    /// Exact (or upper-bound) index count; `None` means a scan.
    estimate: Option<usize>,
    access: String,
}

#[derive(Debug, Clone)]
struct Bound {
    binding: String,
    source: String,
    kind: SourceKind,
    stage1: Vec<Stage1Item>,
    extracts: Vec<ExtractSpec>,
    stage2: Vec<(RExpr, String)>,
    estimate: usize,
}

#[derive(Debug, Clone)]
struct JoinStep {
    left: RCol,
    right: RCol,
    build_right: bool,
}

#[derive(Debug, Clone)]
enum OutExpr {
    Col(RCol),
    Agg(AggFunc, Option<RCol>),
}

#[derive(Debug, Clone)]
struct Output {
    name: String,
    kind: ColumnKind,
    expr: OutExpr,
}

/// An executable query with the explanation of how it will run.
#[derive(Debug, Clone)]
pub struct Plan {
    select: Select,
    bound: Vec<Bound>,
    joins: Vec<JoinStep>,
    post: Vec<(RExpr, String)>,
    outputs: Vec<Output>,
    grouped: bool,
    group_by: Vec<RCol>,
    order: Vec<(usize, bool)>,
    warnings: Vec<String>,
    explain: String,
}

impl Plan {
    pub fn explain(&self) -> &str {
        &self.explain
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn select(&self) -> &Select {
        &self.select
    }

    pub fn extract_count(&self) -> usize {
        self.bound.iter().map(|b| b.extracts.len()).sum()
    }
}

/// Plan a SELECT that uses no temp tables.
pub fn plan(select: &Select, store: &AnnotationStore) -> Result<Plan, SsrError> {
    plan_in(select, store, &Env::new())
}

pub fn plan_in(select: &Select, store: &AnnotationStore, env: &Env) -> Result<Plan, SsrError> {
    Planner { store, env }.plan(select)
}

struct Planner<'a> {
    store: &'a AnnotationStore,
    env: &'a Env,
}

fn columns_of(kind: &SourceKind, store: &AnnotationStore) -> Vec<(String, Slot)> {
    match kind {
        SourceKind::Store => std::iter::once(("doc_id".to_string(), Slot::DocId))
            .chain(store.schema().fields.iter().map(|f| (f.name.clone(), Slot::Field(f.clone()))))
            .collect(),
        SourceKind::Temp(t) => {
            t.columns.iter().enumerate().map(|(i, c)| (c.name.clone(), Slot::TempCol(i, c.kind))).collect()
        }
    }
}

impl Planner<'_> {
    fn plan(&self, select: &Select) -> Result<Plan, SsrError> {
        let mut bound = Vec::new();
        let mut names = BTreeSet::new();
        for src in std::iter::once(&select.source).chain(select.joins.iter().map(|j| &j.source)) {
            let kind = if src.name.eq_ignore_ascii_case(STORE_NAME) {
                SourceKind::Store
            } else {
                match self.env.temps.get(&src.name) {
                    Some(t) => SourceKind::Temp(t.clone()),
                    None => return Err(SsrError::UnknownTempTable(src.name.clone())),
                }
            };
            if !names.insert(src.binding().to_string()) {
                return Err(SsrError::Semantic(format!(
                    "source `{}` appears twice; give each occurrence its own alias",
                    src.binding()
                )));
            }
            let estimate = match &kind {
                SourceKind::Store => self.store.len(),
                SourceKind::Temp(t) => t.len(),
            };
            bound.push(Bound {
                binding: src.binding().to_string(),
                source: src.name.clone(),
                kind,
                stage1: Vec::new(),
                extracts: Vec::new(),
                stage2: Vec::new(),
                estimate,
            });
        }

        // Register extracts so aliases resolve everywhere.
        let mut specs = Vec::new();
        select.conditions.iter().for_each(|c| collect_specs(c, &mut specs));
        for spec in specs {
            let b = self.extract_binding(&bound, spec)?;
            bound[b].extracts.push(spec.clone());
        }
        for b in &mut bound {
            // Stable: ties keep their written order.
            b.extracts.sort_by_key(|x| x.cond.cost_rank());
        }

        let mut post = Vec::new();
        let mut warnings = Vec::new();
        for cond in &select.conditions {
            let r = self.resolve_expr(&bound, cond)?;
            let text = cond.to_string();
            let mut refs = BTreeSet::new();
            r.bindings(&mut refs);
            if refs.len() == 1 {
                let b = *refs.iter().next().unwrap();
                if r.has_extract() {
                    bound[b].stage2.push((r, text));
                } else {
                    let (estimate, access) = self.estimate(&bound[b], &r)?;
                    bound[b].stage1.push(Stage1Item { expr: r, text, estimate, access });
                }
            } else {
                post.push((r, text));
            }
        }
        for b in &mut bound {
            b.stage1.sort_by_key(|s| s.estimate.unwrap_or(usize::MAX));
            if let Some(min) = b.stage1.iter().filter_map(|s| s.estimate).min() {
                b.estimate = b.estimate.min(min);
            }
            if matches!(b.kind, SourceKind::Store) && !b.extracts.is_empty() && b.stage1.is_empty() {
                warnings.push(format!("full_extract_scan: source `{}` has EXTRACT predicates but no schema constraints", b.binding));
            }
        }

        let mut joins = Vec::new();
        let mut left_est = bound[0].estimate;
        for (i, j) in select.joins.iter().enumerate() {
            let target = i + 1;
            let l = self.resolve_col(&bound, &j.left)?;
            let r = self.resolve_col(&bound, &j.right)?;
            let (left, right) = if r.binding == target && l.binding < target {
                (l, r)
            } else if l.binding == target && r.binding < target {
                (r, l)
            } else {
                return Err(SsrError::Semantic(format!(
                    "join condition {} = {} must link `{}` to an earlier source",
                    j.left, j.right, bound[target].binding
                )));
            };
            let right_est = bound[target].estimate;
            joins.push(JoinStep { left, right, build_right: right_est <= left_est });
            left_est = left_est.saturating_mul(right_est);
        }

        let (outputs, grouped, group_by) = self.outputs(&bound, select)?;
        let mut order = Vec::new();
        for item in &select.order_by {
            order.push((self.order_target(&bound, &outputs, &item.key)?, item.desc));
        }

        let mut plan = Plan {
            select: select.clone(),
            bound,
            joins,
            post,
            outputs,
            grouped,
            group_by,
            order,
            warnings,
            explain: String::new(),
        };
        plan.explain = render_explain(&plan);
        Ok(plan)
    }

    fn extract_binding(&self, bound: &[Bound], spec: &ExtractSpec) -> Result<usize, SsrError> {
        let b = match &spec.qualifier {
            Some(q) => bound
                .iter()
                .position(|b| &b.binding == q)
                .ok_or_else(|| SsrError::UnknownField(format!("{q}.{}", spec.alias)))?,
            None => {
                let stores: Vec<usize> =
                    (0..bound.len()).filter(|&i| matches!(bound[i].kind, SourceKind::Store)).collect();
                match stores.as_slice() {
                    [one] => *one,
                    [] => {
                        return Err(SsrError::Semantic(format!(
                            "EXTRACT({}) needs a store source; temp tables have no document text",
                            spec.alias
                        )))
                    }
                    _ => {
                        return Err(SsrError::Semantic(format!(
                            "EXTRACT({}) is ambiguous; qualify it with a source name",
                            spec.alias
                        )))
                    }
                }
            }
        };
        if !matches!(bound[b].kind, SourceKind::Store) {
            return Err(SsrError::Semantic(format!(
                "EXTRACT({}) targets temp table `{}`, which has no document text",
                spec.alias, bound[b].binding
            )));
        }
        Ok(b)
    }

    fn resolve_col(&self, bound: &[Bound], c: &ColumnRef) -> Result<RCol, SsrError> {
        let display = c.to_string();
        // Extract aliases shadow schema and temp columns.
        let alias_hits: Vec<(usize, usize)> = bound
            .iter()
            .enumerate()
            .filter(|(_, b)| c.qualifier.as_ref().is_none_or(|q| q == &b.binding))
            .flat_map(|(bi, b)| {
                b.extracts.iter().enumerate().filter(|(_, x)| x.alias == c.name).map(move |(xi, _)| (bi, xi))
            })
            .collect();
        if let [(binding, xi)] = alias_hits.as_slice() {
            return Ok(RCol { binding: *binding, slot: Slot::Extract(*xi), display });
        }
        let mut hits = Vec::new();
        for (bi, b) in bound.iter().enumerate() {
            if c.qualifier.as_ref().is_some_and(|q| q != &b.binding) {
                continue;
            }
            for (name, slot) in columns_of(&b.kind, self.store) {
                if name == c.name {
                    hits.push(RCol { binding: bi, slot, display: display.clone() });
                }
            }
        }
        match hits.len() {
            0 => {
                if let Some(q) = &c.qualifier {
                    if !bound.iter().any(|b| &b.binding == q) {
                        return Err(SsrError::Semantic(format!("unknown source `{q}` in `{display}`")));
                    }
                }
                Err(SsrError::UnknownField(display))
            }
            1 => Ok(hits.pop().unwrap()),
            _ => Err(SsrError::Semantic(format!("column `{display}` is ambiguous; qualify it with a source name"))),
        }
    }

    fn resolve_expr(&self, bound: &[Bound], e: &Expr) -> Result<RExpr, SsrError> {
        Ok(match e {
            Expr::And(xs) => RExpr::And(xs.iter().map(|x| self.resolve_expr(bound, x)).collect::<Result<_, _>>()?),
            Expr::Or(xs) => RExpr::Or(xs.iter().map(|x| self.resolve_expr(bound, x)).collect::<Result<_, _>>()?),
            Expr::Extract(x) => {
                let binding = self.extract_binding(bound, x)?;
                let slot = bound[binding].extracts.iter().position(|s| s.alias == x.alias).expect("registered");
                RExpr::Extract { binding, slot }
            }
            Expr::Compare { col, op, value } => {
                let rc = self.resolve_col(bound, col)?;
                let test = self.test(&rc, *op, value)?;
                RExpr::Leaf { kind: LeafKind::Cmp(*op, value.clone(), test), col: rc }
            }
            Expr::In { col, values } => {
                let rc = self.resolve_col(bound, col)?;
                let tests = values.iter().map(|v| self.test(&rc, CompareOp::Eq, v)).collect::<Result<_, _>>()?;
                RExpr::Leaf { kind: LeafKind::In(values.clone(), tests), col: rc }
            }
            Expr::Contains { col, text } => {
                let rc = self.resolve_col(bound, col)?;
                RExpr::Leaf { kind: LeafKind::Contains(text.clone(), tokenize(text)), col: rc }
            }
        })
    }

    fn test(&self, rc: &RCol, op: CompareOp, lit: &Literal) -> Result<CellTest, SsrError> {
        CellTest::new(rc.kind(), op, lit).map_err(|detail| SsrError::TypeError { field: rc.display.clone(), detail })
    }

    /// Index count for an index-backed expression, or `None` for a scan.
    fn estimate(&self, b: &Bound, e: &RExpr) -> Result<(Option<usize>, String), SsrError> {
        if !matches!(b.kind, SourceKind::Store) {
            return Ok((None, "scan".into()));
        }
        let n = self.store.len();
        Ok(match e {
            RExpr::Leaf { col, kind, .. } => match index_access(self.store, col, kind) {
                Some(Access::Fast(name, pred)) => (Some(self.store.count_fast(&name, &pred).map_err(store_err)?), "fast index".into()),
                Some(Access::Sem(name, ms)) => {
                    let mut total = 0;
                    for m in &ms {
                        total += self.store.count_sem(&name, m).map_err(store_err)?;
                    }
                    (Some(total.min(n)), "sem index".into())
                }
                None => (None, "scan".into()),
            },
            RExpr::And(xs) | RExpr::Or(xs) => {
                let mut ests = Vec::new();
                for x in xs {
                    match self.estimate(b, x)?.0 {
                        Some(v) => ests.push(v),
                        None => return Ok((None, "scan".into())),
                    }
                }
                let est = if matches!(e, RExpr::And(_)) {
                    ests.into_iter().min().unwrap_or(n)
                } else {
                    ests.into_iter().sum::<usize>().min(n)
                };
                (Some(est), "index set algebra".into())
            }
            RExpr::Extract { .. } => (None, "scan".into()),
        })
    }

    #[allow(clippy::type_complexity)]
    fn outputs(&self, bound: &[Bound], select: &Select) -> Result<(Vec<Output>, bool, Vec<RCol>), SsrError> {
        let group_by: Vec<RCol> =
            select.group_by.iter().map(|c| self.resolve_col(bound, c)).collect::<Result<_, _>>()?;
        let grouped = !group_by.is_empty() || select.projections.iter().any(|p| matches!(p, Projection::Aggregate { .. }));
        let mut raw: Vec<(Option<String>, String, String, ColumnKind, OutExpr)> = Vec::new();
        for p in &select.projections {
            match p {
                Projection::Star => {
                    if grouped {
                        return Err(SsrError::Semantic("SELECT * cannot be combined with aggregation".into()));
                    }
                    for (bi, b) in bound.iter().enumerate() {
                        for (name, slot) in columns_of(&b.kind, self.store) {
                            let rc = RCol { binding: bi, slot, display: format!("{}.{name}", b.binding) };
                            raw.push((None, name, rc.display.clone(), rc.kind(), OutExpr::Col(rc)));
                        }
                    }
                }
                Projection::Column { col, alias } => {
                    let rc = self.resolve_col(bound, col)?;
                    if grouped && !group_by.contains(&rc) {
                        return Err(SsrError::Semantic(format!(
                            "`{col}` must appear in GROUP BY or inside an aggregate"
                        )));
                    }
                    let qual = format!("{}.{}", bound[rc.binding].binding, col.name);
                    raw.push((alias.clone(), col.name.clone(), qual, rc.kind(), OutExpr::Col(rc)));
                }
                Projection::Aggregate { func, arg, alias } => {
                    let rc = arg.as_ref().map(|a| self.resolve_col(bound, a)).transpose()?;
                    let kind = match (func, &rc) {
                        (AggFunc::Sum | AggFunc::Avg, Some(c)) => {
                            if !matches!(c.kind(), ColumnKind::Field(ValueType::Number) | ColumnKind::Dynamic) {
                                return Err(SsrError::TypeError {
                                    field: c.display.clone(),
                                    detail: format!("{} needs a numeric column", func.as_str().to_uppercase()),
                                });
                            }
                            ColumnKind::Dynamic
                        }
                        (AggFunc::Min | AggFunc::Max, Some(c)) => {
                            if c.kind() == ColumnKind::Field(ValueType::StringSet) {
                                return Err(SsrError::TypeError {
                                    field: c.display.clone(),
                                    detail: "MIN/MAX are undefined on sets".into(),
                                });
                            }
                            c.kind()
                        }
                        _ => ColumnKind::Dynamic,
                    };
                    let inner = arg.as_ref().map_or("*".to_string(), |a| a.to_string());
                    let name = format!("{}({inner})", func.as_str());
                    raw.push((alias.clone(), name.clone(), name, kind, OutExpr::Agg(*func, rc)));
                }
            }
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for (alias, bare, _, _, _) in &raw {
            *counts.entry(alias.clone().unwrap_or_else(|| bare.clone())).or_default() += 1;
        }
        let mut outputs = Vec::new();
        let mut seen = BTreeSet::new();
        for (alias, bare, qual, kind, expr) in raw {
            let name = match alias {
                Some(a) => a,
                None if counts[&bare] > 1 => qual,
                None => bare,
            };
            if !seen.insert(name.clone()) {
                return Err(SsrError::Semantic(format!("output column `{name}` appears twice; alias one of them")));
            }
            outputs.push(Output { name, kind, expr });
        }
        Ok((outputs, grouped, group_by))
    }

    fn order_target(&self, bound: &[Bound], outputs: &[Output], key: &Projection) -> Result<usize, SsrError> {
        match key {
            Projection::Column { col, .. } => {
                if col.qualifier.is_none() {
                    if let Some(i) = outputs.iter().position(|o| o.name == col.name) {
                        return Ok(i);
                    }
                }
                if let Some(i) = outputs.iter().position(|o| o.name == col.to_string()) {
                    return Ok(i);
                }
                let rc = self.resolve_col(bound, col)?;
                outputs
                    .iter()
                    .position(|o| matches!(&o.expr, OutExpr::Col(c) if c.binding == rc.binding && c.slot == rc.slot))
                    .ok_or_else(|| SsrError::Semantic(format!("ORDER BY `{col}` must name an output column")))
            }
            Projection::Aggregate { func, arg, .. } => {
                let rc = arg.as_ref().map(|a| self.resolve_col(bound, a)).transpose()?;
                outputs
                    .iter()
                    .position(|o| match &o.expr {
                        OutExpr::Agg(f, a) => {
                            f == func
                                && match (a, &rc) {
                                    (None, None) => true,
                                    (Some(x), Some(y)) => x.binding == y.binding && x.slot == y.slot,
                                    _ => false,
                                }
                        }
                        _ => false,
                    })
                    .ok_or_else(|| SsrError::Semantic(format!("ORDER BY {key} must name an output column")))
            }
            Projection::Star => Err(SsrError::Semantic("ORDER BY * is not allowed".into())),
        }
    }
}

fn collect_specs<'a>(e: &'a Expr, out: &mut Vec<&'a ExtractSpec>) {
    match e {
        Expr::And(xs) | Expr::Or(xs) => xs.iter().for_each(|x| collect_specs(x, out)),
        Expr::Extract(x) => out.push(x),
        _ => {}
    }
}

fn store_err(e: crate::index::StoreError) -> SsrError {
    SsrError::Semantic(e.to_string())
}

enum Access {
    Fast(String, FastPredicate),
    Sem(String, Vec<SemMatch>),
}

fn text_like(vt: ValueType) -> bool {
    matches!(vt, ValueType::String | ValueType::StringSet | ValueType::Categorical)
}

/// How a leaf on a store field can be answered from an index.
fn index_access(store: &AnnotationStore, col: &RCol, kind: &LeafKind) -> Option<Access> {
    let Slot::Field(f) = &col.slot else { return None };
    match f.tier {
        Tier::Fast if store.fast().columns().iter().any(|c| c.name == f.name) => match kind {
            LeafKind::Cmp(op, lit, _) => Some(Access::Fast(f.name.clone(), FastPredicate::Compare(*op, lit.clone()))),
            LeafKind::In(lits, _) => Some(Access::Fast(f.name.clone(), FastPredicate::In(lits.clone()))),
            LeafKind::Contains(..) => None,
        },
        Tier::Sem if text_like(f.value_type) => {
            let eq = |lit: &Literal| match literal_key(f.value_type, lit) {
                Ok(Key::Text(t)) => Some(SemMatch::Equals(t)),
                _ => None,
            };
            match kind {
                LeafKind::Cmp(CompareOp::Eq, lit, _) => Some(Access::Sem(f.name.clone(), vec![eq(lit)?])),
                LeafKind::In(lits, _) => {
                    Some(Access::Sem(f.name.clone(), lits.iter().map(eq).collect::<Option<Vec<_>>>()?))
                }
                LeafKind::Contains(text, _) => Some(Access::Sem(f.name.clone(), vec![SemMatch::contains(text)])),
                _ => None,
            }
        }
        _ => None,
    }
}

fn render_explain(p: &Plan) -> String {
    let mut s = String::new();
    for (i, b) in p.bound.iter().enumerate() {
        let what = match &b.kind {
            SourceKind::Store => "store",
            SourceKind::Temp(_) => "temp table",
        };
        let _ = writeln!(s, "source {i}: {} ({what} `{}`)", b.binding, b.source);
        if b.stage1.is_empty() {
            let _ = writeln!(s, "  stage 1: all rows");
        } else {
            let _ = writeln!(s, "  stage 1: schema constraints");
            for (k, it) in b.stage1.iter().enumerate() {
                let est = it.estimate.map_or(String::new(), |e| format!(", est {e}"));
                let _ = writeln!(s, "    {}. {} [{}{est}]", k + 1, it.text, it.access);
            }
        }
        if !b.extracts.is_empty() {
            let _ = writeln!(s, "  stage 2: EXTRACT on stage-1 survivors");
            for (k, x) in b.extracts.iter().enumerate() {
                let _ = writeln!(s, "    {}. {} [{}]", k + 1, Expr::Extract(x.clone()), x.cond.kind());
            }
            for (_, text) in b.stage2.iter().filter(|(e, _)| !matches!(e, RExpr::Extract { .. })) {
                let _ = writeln!(s, "    filter {text}");
            }
        }
    }
    for (i, j) in p.joins.iter().enumerate() {
        let build = if j.build_right { &p.bound[i + 1].binding } else { "joined input" };
        let _ = writeln!(s, "hash join {} on {} = {}, build side {build}", p.bound[i + 1].binding, j.left.display, j.right.display);
    }
    for (_, text) in &p.post {
        let _ = writeln!(s, "filter joined rows: {text}");
    }
    if p.grouped {
        let g: Vec<&str> = p.group_by.iter().map(|c| c.display.as_str()).collect();
        let _ = writeln!(s, "aggregate by [{}]", g.join(", "));
    }
    let cols: Vec<&str> = p.outputs.iter().map(|o| o.name.as_str()).collect();
    let _ = writeln!(s, "project {}", cols.join(", "));
    if !p.order.is_empty() {
        let o: Vec<String> =
            p.order.iter().map(|(i, d)| format!("{}{}", p.outputs[*i].name, if *d { " desc" } else { "" })).collect();
        let _ = writeln!(s, "order by {}", o.join(", "));
    }
    if let Some(l) = p.select.limit {
        let _ = writeln!(s, "limit {l}");
    }
    for w in &p.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

/// Per-binding stage-2 results, keyed by row.
type ExtractResults = HashMap<u32, Vec<(bool, Option<Cell>)>>;

struct Ctx<'a> {
    store: &'a AnnotationStore,
    plan: &'a Plan,
    results: Vec<ExtractResults>,
}

impl Ctx<'_> {
    fn cell(&self, col: &RCol, row: u32) -> Cell {
        match &col.slot {
            Slot::DocId => Cell::Text(self.store.doc_id(row).to_string()),
            Slot::Field(f) => field_cell(f, self.store.field_values(row, &f.name)),
            Slot::TempCol(i, _) => match &self.plan.bound[col.binding].kind {
                SourceKind::Temp(t) => t.rows[row as usize][*i].clone(),
                SourceKind::Store => unreachable!("temp column on a store"),
            },
            Slot::Extract(x) => self.results[col.binding]
                .get(&row)
                .and_then(|r| r[*x].1.clone())
                .unwrap_or(Cell::Null),
        }
    }

    fn values(&self, col: &RCol, row: u32) -> Cell {
        match &col.slot {
            Slot::Field(f) => Cell::List(self.store.field_values(row, &f.name).to_vec()),
            _ => self.cell(col, row),
        }
    }

    fn holds(&self, e: &RExpr, tuple: &[u32]) -> bool {
        match e {
            RExpr::And(xs) => xs.iter().all(|x| self.holds(x, tuple)),
            RExpr::Or(xs) => xs.iter().any(|x| self.holds(x, tuple)),
            RExpr::Extract { binding, slot } => {
                self.results[*binding].get(&tuple[*binding]).is_some_and(|r| r[*slot].0)
            }
            RExpr::Leaf { col, kind, .. } => {
                let v = self.values(col, tuple[col.binding]);
                match kind {
                    LeafKind::Cmp(_, _, t) => t.holds(&v),
                    LeafKind::In(_, ts) => ts.iter().any(|t| t.holds(&v)),
                    LeafKind::Contains(_, phrase) => phrase_in(&v.strings(), phrase),
                }
            }
        }
    }

    /// Single-binding evaluation through the indexes.
    fn index_eval(&self, e: &RExpr) -> Result<DocSet, SsrError> {
        match e {
            RExpr::And(xs) => {
                let mut acc: Option<DocSet> = None;
                for x in xs {
                    let s = self.index_eval(x)?;
                    acc = Some(match acc {
                        None => s,
                        Some(a) => intersect(&a, &s),
                    });
                }
                Ok(acc.unwrap_or_else(|| self.store.all_rows()))
            }
            RExpr::Or(xs) => {
                let mut acc = DocSet::new();
                for x in xs {
                    acc = union(&acc, &self.index_eval(x)?);
                }
                Ok(acc)
            }
            RExpr::Leaf { col, kind, .. } => match index_access(self.store, col, kind) {
                Some(Access::Fast(name, pred)) => self.store.lookup_fast(&name, &pred).map_err(store_err),
                Some(Access::Sem(name, ms)) => {
                    let mut acc = DocSet::new();
                    for m in &ms {
                        acc = union(&acc, &self.store.lookup_sem(&name, m).map_err(store_err)?);
                    }
                    Ok(acc)
                }
                None => unreachable!("planned as index-backed"),
            },
            RExpr::Extract { .. } => unreachable!("extracts are not index-backed"),
        }
    }
}

fn field_cell(f: &FieldSpec, values: &[String]) -> Cell {
    if values.is_empty() {
        return Cell::Null;
    }
    match f.value_type {
        ValueType::StringSet => Cell::List(values.to_vec()),
        ValueType::Number => values[0].parse().map(Cell::Number).unwrap_or_else(|_| Cell::Text(values[0].clone())),
        _ => Cell::Text(values[0].clone()),
    }
}

/// Canonical join keys of a cell under its column kind.
fn join_keys(kind: ColumnKind, cell: &Cell) -> Vec<String> {
    match (kind, cell) {
        (_, Cell::Null) => Vec::new(),
        (ColumnKind::DocId, c) => c.strings(),
        (_, Cell::Number(n)) => vec![format_number(*n)],
        (ColumnKind::Field(ValueType::Number), c) => c
            .strings()
            .iter()
            .map(|s| s.parse::<f64>().map(format_number).unwrap_or_else(|_| normalize_text(s)))
            .collect(),
        (ColumnKind::Field(ValueType::Date), c) => c.strings(),
        (_, c) => c.strings().iter().map(|s| normalize_text(s)).collect(),
    }
}

/// Run a plan against the store it was built for.
pub fn execute(plan: &Plan, store: &AnnotationStore) -> Result<(ResultTable, LatencyProfile), SsrError> {
    let t0 = Instant::now();
    let mut profile = LatencyProfile::default();
    let mut ctx = Ctx { store, plan, results: vec![HashMap::new(); plan.bound.len()] };
    let mut survivors: Vec<DocSet> = Vec::with_capacity(plan.bound.len());

    for (bi, b) in plan.bound.iter().enumerate() {
        let ts = Instant::now();
        let n_rows = match &b.kind {
            SourceKind::Store => store.len(),
            SourceKind::Temp(t) => t.len(),
        };
        let mut cand: DocSet = (0..n_rows as u32).collect();
        for it in b.stage1.iter().filter(|it| it.estimate.is_some()) {
            cand = intersect(&cand, &ctx.index_eval(&it.expr)?);
        }
        let mut tuple = vec![0u32; plan.bound.len()];
        for it in b.stage1.iter().filter(|it| it.estimate.is_none()) {
            cand.retain(|&r| {
                tuple[bi] = r;
                ctx.holds(&it.expr, &tuple)
            });
        }
        let l_index = ts.elapsed().as_secs_f64();
        if matches!(b.kind, SourceKind::Store) {
            profile.l_index_seconds += l_index;
            profile.candidate_count += cand.len();
        }

        if !b.extracts.is_empty() {
            let te = Instant::now();
            let evaluated: Vec<(u32, Vec<(bool, Option<Cell>)>)> = cand
                .par_iter()
                .map(|&r| {
                    let text = store
                        .raw_text(r)
                        .map_err(|e| SsrError::Execution { doc_id: store.doc_id(r).to_string(), detail: e.to_string() })?;
                    Ok((r, b.extracts.iter().map(|x| eval_extract(x, text)).collect()))
                })
                .collect::<Result<_, SsrError>>()?;
            profile.extract_invocations += evaluated.len() * b.extracts.len();
            ctx.results[bi] = evaluated.into_iter().collect();
            cand.retain(|&r| {
                tuple[bi] = r;
                b.stage2.iter().all(|(e, _)| ctx.holds(e, &tuple))
            });
            profile.l_extract_total_seconds += te.elapsed().as_secs_f64();
        }
        survivors.push(cand);
    }

    let mut tuples: Vec<Vec<u32>> = survivors[0].iter().map(|&r| vec![r]).collect();
    for (ji, j) in plan.joins.iter().enumerate() {
        let right = &survivors[ji + 1];
        let left_keys: Vec<Vec<String>> =
            tuples.iter().map(|t| join_keys(j.left.kind(), &ctx.values(&j.left, t[j.left.binding]))).collect();
        let right_keys: Vec<Vec<String>> =
            right.iter().map(|&r| join_keys(j.right.kind(), &ctx.values(&j.right, r))).collect();
        let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
        let (build, probe, build_is_right) =
            if j.build_right { (&right_keys, &left_keys, true) } else { (&left_keys, &right_keys, false) };
        let mut table: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, keys) in build.iter().enumerate() {
            for k in keys {
                table.entry(k.as_str()).or_default().push(i);
            }
        }
        for (pi, keys) in probe.iter().enumerate() {
            for k in keys {
                for &bi in table.get(k.as_str()).map_or(&[][..], Vec::as_slice) {
                    pairs.insert(if build_is_right { (pi, bi) } else { (bi, pi) });
                }
            }
        }
        tuples = pairs
            .into_iter()
            .map(|(l, r)| {
                let mut t = tuples[l].clone();
                t.push(right[r]);
                t
            })
            .collect();
    }
    if !plan.post.is_empty() {
        tuples.retain(|t| plan.post.iter().all(|(e, _)| ctx.holds(e, t)));
    }

    let table = project(&ctx, &tuples);
    profile.total_seconds = t0.elapsed().as_secs_f64().max(profile.l_index_seconds + profile.l_extract_total_seconds);
    Ok((table, profile))
}

fn provenance(ctx: &Ctx, t: &[u32]) -> Vec<String> {
    let mut out = Vec::new();
    for (bi, b) in ctx.plan.bound.iter().enumerate() {
        match &b.kind {
            SourceKind::Store => out.push(ctx.store.doc_id(t[bi]).to_string()),
            SourceKind::Temp(tab) => out.extend(tab.provenance[t[bi] as usize].iter().cloned()),
        }
    }
    out.sort();
    out.dedup();
    out
}

fn aggregate(ctx: &Ctx, func: AggFunc, arg: Option<&RCol>, members: &[&Vec<u32>]) -> Cell {
    let Some(col) = arg else { return Cell::Number(members.len() as f64) };
    let cells: Vec<Cell> = members.iter().map(|t| ctx.cell(col, t[col.binding])).filter(|c| !c.is_null()).collect();
    match func {
        AggFunc::Count => Cell::Number(cells.len() as f64),
        AggFunc::Sum | AggFunc::Avg => {
            let nums: Vec<f64> = cells
                .iter()
                .filter_map(|c| match c {
                    Cell::Number(n) => Some(*n),
                    Cell::Text(s) => crate::annotator::parse_number(s).and_then(|d| d.parse().ok()),
                    _ => None,
                })
                .collect();
            if nums.is_empty() {
                return Cell::Null;
            }
            let sum: f64 = nums.iter().sum();
            Cell::Number(if func == AggFunc::Sum { sum } else { sum / nums.len() as f64 })
        }
        AggFunc::Min => cells.into_iter().min_by(|a, b| a.total_cmp(b)).unwrap_or(Cell::Null),
        AggFunc::Max => cells.into_iter().max_by(|a, b| a.total_cmp(b)).unwrap_or(Cell::Null),
    }
}

fn project(ctx: &Ctx, tuples: &[Vec<u32>]) -> ResultTable {
    let plan = ctx.plan;
    let columns: Vec<Column> = plan.outputs.iter().map(|o| Column { name: o.name.clone(), kind: o.kind }).collect();
    let mut rows: Vec<Vec<Cell>> = Vec::new();
    let mut prov: Vec<Vec<String>> = Vec::new();
    if plan.grouped {
        let mut order: Vec<Vec<String>> = Vec::new();
        let mut groups: HashMap<Vec<String>, Vec<&Vec<u32>>> = HashMap::new();
        for t in tuples {
            let key: Vec<String> = plan.group_by.iter().map(|c| cell_key(&ctx.cell(c, t[c.binding]))).collect();
            let g = groups.entry(key.clone()).or_default();
            if g.is_empty() {
                order.push(key);
            }
            g.push(t);
        }
        if plan.group_by.is_empty() && order.is_empty() {
            order.push(Vec::new());
            groups.insert(Vec::new(), Vec::new());
        }
        for key in order {
            let members = &groups[&key];
            let row = plan
                .outputs
                .iter()
                .map(|o| match &o.expr {
                    OutExpr::Col(c) => ctx.cell(c, members[0][c.binding]),
                    OutExpr::Agg(f, a) => aggregate(ctx, *f, a.as_ref(), members),
                })
                .collect();
            let mut p: Vec<String> = members.iter().flat_map(|t| provenance(ctx, t)).collect();
            p.sort();
            p.dedup();
            rows.push(row);
            prov.push(p);
        }
    } else {
        for t in tuples {
            rows.push(
                plan.outputs
                    .iter()
                    .map(|o| match &o.expr {
                        OutExpr::Col(c) => ctx.cell(c, t[c.binding]),
                        OutExpr::Agg(..) => unreachable!("ungrouped plan"),
                    })
                    .collect(),
            );
            prov.push(provenance(ctx, t));
        }
    }
    if !plan.order.is_empty() {
        let mut idx: Vec<usize> = (0..rows.len()).collect();
        idx.sort_by(|&a, &b| {
            for &(c, desc) in &plan.order {
                let o = rows[a][c].total_cmp(&rows[b][c]);
                let o = if desc { o.reverse() } else { o };
                if o.is_ne() {
                    return o;
                }
            }
            std::cmp::Ordering::Equal
        });
        rows = idx.iter().map(|&i| rows[i].clone()).collect();
        prov = idx.iter().map(|&i| prov[i].clone()).collect();
    }
    if let Some(l) = plan.select.limit {
        rows.truncate(l);
        prov.truncate(l);
    }
    ResultTable { columns, rows, provenance: prov }
}

fn cell_key(c: &Cell) -> String {
    match c {
        Cell::Null => "\u{0}null".into(),
        Cell::Number(n) => format!("n:{}", format_number(*n)),
        Cell::Text(s) => format!("t:{s}"),
        Cell::List(v) => format!("l:{}", v.join("\u{1}")),
    }
}

/// One statement (or WITH clause) of a script.
#[derive(Debug, Clone)]
pub struct StatementRun {
    /// Temp table name, or `statement N` for an unnamed final select.
    pub label: String,
    pub explain: String,
    pub warnings: Vec<String>,
    pub profile: LatencyProfile,
    pub rows: usize,
}

#[derive(Debug, Clone)]
pub struct ScriptOutput {
    pub table: ResultTable,
    pub runs: Vec<StatementRun>,
}

/// Run statements in order. Tables named by `WITH` or `CREATE TEMP` stay
/// visible to every later statement; the last statement's table is
/// returned.
pub fn run_script(script: &Script, store: &AnnotationStore) -> Result<ScriptOutput, SsrError> {
    let mut env = Env::new();
    let mut runs = Vec::new();
    let mut last = None;
    for (si, st) in script.statements.iter().enumerate() {
        for (name, sel) in &st.with {
            let table = run_one(sel, store, &env, name, &mut runs)?;
            env.insert(name, table)?;
        }
        let label = st.create.clone().unwrap_or_else(|| format!("statement {}", si + 1));
        let table = run_one(&st.select, store, &env, &label, &mut runs)?;
        if let Some(name) = &st.create {
            env.insert(name, table.clone())?;
        }
        last = Some(table);
    }
    let table = last.ok_or_else(|| SsrError::Semantic("empty script".into()))?;
    Ok(ScriptOutput { table, runs })
}

fn run_one(
    sel: &Select,
    store: &AnnotationStore,
    env: &Env,
    label: &str,
    runs: &mut Vec<StatementRun>,
) -> Result<ResultTable, SsrError> {
    let p = plan_in(sel, store, env)?;
    let (table, profile) = execute(&p, store)?;
    runs.push(StatementRun {
        label: label.to_string(),
        explain: p.explain.clone(),
        warnings: p.warnings.clone(),
        profile,
        rows: table.len(),
    });
    Ok(table)
}
