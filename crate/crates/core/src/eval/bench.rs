//! End-to-end benchmark: induce, annotate, index, run gold queries, score.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{cell_key, cohesion, completion, schema_f1, tuple_prf, EvalError, Flagged, GroundTruth};
use crate::annotator::{run_annotation, ExtractorRegistry};
use crate::corpus::Corpus;
use crate::index::{build_store, AnnotationStore};
use crate::schemaboot::{induce, InduceConfig, Induction, ScalarWeights};
use crate::ssr::{parse_script, run_script, Cell};

/// Benchmark selection ranks the front on Q alone. The time and storage
/// limits still bound the front through feasibility.
pub const BENCH_SELECTION: ScalarWeights = ScalarWeights { q: 1.0, t: 0.0, s: 0.0 };

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub induce: InduceConfig,
    pub registry: ExtractorRegistry,
    /// Annotation worker threads.
    pub jobs: usize,
    /// Recorded in the store manifest; fixed so repeated runs hash equal.
    pub built_at: String,
    /// Use the gold query texts as the induction query history when the
    /// configured history is empty.
    pub history_from_gold: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            induce: InduceConfig { selection: BENCH_SELECTION, ..InduceConfig::default() },
            registry: ExtractorRegistry::default(),
            jobs: 1,
            built_at: String::new(),
            history_from_gold: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryScore {
    pub id: String,
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
    pub rows: usize,
    /// Stage-1 survivors summed over the query's statements.
    pub candidates: usize,
    pub extract_invocations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Work counts of the query stage. Wall-clock times live in
/// [`BenchTiming`] so the report itself stays reproducible.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencySummary {
    pub candidates_total: usize,
    pub extract_invocations_total: usize,
    pub mean_candidates: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_id: String,
    pub fields: Vec<String>,
    pub queries: Vec<QueryScore>,
    pub macro_p: f64,
    pub macro_r: f64,
    pub macro_f1: f64,
    pub schema_f1: f64,
    pub cohesion: Flagged,
    pub completion: Flagged,
    /// Share of gold documents whose stored values equal the gold values,
    /// per gold field the schema defines.
    pub field_accuracy: BTreeMap<String, f64>,
    pub latency: LatencySummary,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Plain-text summary table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<24} {:>7} {:>7} {:>7} {:>6} {:>6} {:>8}\n", "query", "p", "r", "f1", "rows", "n", "extract"));
        for q in &self.queries {
            out.push_str(&format!(
                "{:<24} {:>7.4} {:>7.4} {:>7.4} {:>6} {:>6} {:>8}{}\n",
                q.id,
                q.p,
                q.r,
                q.f1,
                q.rows,
                q.candidates,
                q.extract_invocations,
                q.error.as_ref().map(|e| format!("  error: {e}")).unwrap_or_default()
            ));
        }
        out.push_str(&format!("{:<24} {:>7.4} {:>7.4} {:>7.4}\n", "macro", self.macro_p, self.macro_r, self.macro_f1));
        out.push_str(&format!("schema_f1   {:.4}\n", self.schema_f1));
        out.push_str(&format!("cohesion    {:.4}\n", self.cohesion.value));
        out.push_str(&format!("completion  {:.4}\n", self.completion.value));
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BenchTiming {
    pub induce_seconds: f64,
    pub annotate_seconds: f64,
    pub index_seconds: f64,
    pub query_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug)]
pub struct BenchOutcome {
    pub report: EvalReport,
    pub induction: Induction,
    pub store: AnnotationStore,
    pub timing: BenchTiming,
}

fn stage<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> EvalError {
    move |e| EvalError::Stage { stage, detail: e.to_string() }
}

fn value_set(values: &[String]) -> BTreeSet<String> {
    values.iter().map(|v| cell_key(&Cell::Text(v.clone()))).collect()
}

fn field_accuracy(store: &AnnotationStore, gold: &GroundTruth) -> BTreeMap<String, f64> {
    let names: BTreeSet<&String> = gold.fields.values().flat_map(|m| m.keys()).collect();
    let mut out = BTreeMap::new();
    for name in names {
        if store.schema().field(name).is_none() {
            continue;
        }
        let (mut ok, mut n) = (0usize, 0usize);
        for (doc_id, fields) in &gold.fields {
            let Some(gv) = fields.get(name) else { continue };
            n += 1;
            if let Some(row) = store.row_of(doc_id) {
                if value_set(store.field_values(row, name)) == value_set(gv) {
                    ok += 1;
                }
            }
        }
        if n > 0 {
            out.insert(name.clone(), ok as f64 / n as f64);
        }
    }
    out
}

/// Cluster, induce, annotate and index `corpus`, run every gold query over
/// the store and score it.
pub fn bench_pipeline(corpus: &Corpus, gold: &GroundTruth, config: &BenchConfig) -> Result<BenchOutcome, EvalError> {
    let started = Instant::now();
    let mut timing = BenchTiming::default();
    let mut warnings = Vec::new();

    let t = Instant::now();
    let mut induce_config = config.induce.clone();
    if induce_config.query_history.is_empty() && config.history_from_gold {
        induce_config.query_history = gold.queries.iter().map(|q| q.query.clone()).collect();
    }
    let induction = induce(corpus, &config.registry, &induce_config).map_err(stage("induce"))?;
    timing.induce_seconds = t.elapsed().as_secs_f64();
    let schema = induction.schema.clone();

    let t = Instant::now();
    let batch = run_annotation(corpus, &schema, &config.registry, config.jobs.max(1)).map_err(stage("annotate"))?;
    timing.annotate_seconds = t.elapsed().as_secs_f64();
    if !batch.failures.is_empty() {
        warnings.push(format!("{} documents failed annotation", batch.failures.len()));
    }

    let t = Instant::now();
    let store = build_store(&batch, &schema, corpus, &config.built_at).map_err(stage("index"))?;
    timing.index_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let report = evaluate_store(&store, gold, warnings);
    timing.query_seconds = t.elapsed().as_secs_f64();
    timing.total_seconds = started.elapsed().as_secs_f64();
    Ok(BenchOutcome { report, induction, store, timing })
}

/// Run every gold query over an existing store and score the results and
/// the store's schema.
pub fn evaluate_store(store: &AnnotationStore, gold: &GroundTruth, mut warnings: Vec<String>) -> EvalReport {
    let schema = store.schema();
    let mut scores = Vec::new();
    let mut parsed = Vec::new();
    for q in &gold.queries {
        let script = match parse_script(&q.query) {
            Ok(s) => s,
            Err(e) => {
                warnings.push(format!("{}: {e}", q.id));
                scores.push(failed(&q.id, e.to_string()));
                continue;
            }
        };
        parsed.push(script.clone());
        let expected = match q.expected() {
            Ok(Some(e)) => e,
            Ok(None) => {
                warnings.push(format!("{}: no gold rows, skipped", q.id));
                continue;
            }
            Err(e) => {
                warnings.push(format!("{}: {e}", q.id));
                continue;
            }
        };
        let score = match run_script(&script, store) {
            Ok(out) => {
                let candidates = out.runs.iter().map(|r| r.profile.candidate_count).sum();
                let extract_invocations = out.runs.iter().map(|r| r.profile.extract_invocations).sum();
                match tuple_prf(&out.table, &expected) {
                    Ok(prf) => QueryScore {
                        id: q.id.clone(),
                        p: prf.p,
                        r: prf.r,
                        f1: prf.f1,
                        degenerate: prf.degenerate,
                        rows: out.table.len(),
                        candidates,
                        extract_invocations,
                        error: None,
                    },
                    Err(e) => failed(&q.id, e.to_string()),
                }
            }
            Err(e) => failed(&q.id, e.to_string()),
        };
        if let Some(e) = &score.error {
            warnings.push(format!("{}: {e}", q.id));
        }
        scores.push(score);
    }

    let n = scores.len().max(1) as f64;
    let mean = |f: fn(&QueryScore) -> f64| scores.iter().map(f).sum::<f64>() / n;
    let candidates_total: usize = scores.iter().map(|s| s.candidates).sum();
    let latency = LatencySummary {
        candidates_total,
        extract_invocations_total: scores.iter().map(|s| s.extract_invocations).sum(),
        mean_candidates: candidates_total as f64 / n,
    };
    let schema_f1 = match schema_f1(schema, &gold.schema) {
        Ok(v) => v,
        Err(e) => {
            warnings.push(e.to_string());
            0.0
        }
    };
    if scores.is_empty() {
        warnings.push("no query was scored".into());
    }
    EvalReport {
        schema_id: schema.schema_id.clone(),
        fields: schema.fields.iter().map(|f| f.name.clone()).collect(),
        macro_p: mean(|s| s.p),
        macro_r: mean(|s| s.r),
        macro_f1: mean(|s| s.f1),
        queries: scores,
        schema_f1,
        cohesion: cohesion(schema),
        completion: completion(schema, &parsed),
        field_accuracy: field_accuracy(store, gold),
        latency,
        warnings,
    }
}

fn failed(id: &str, error: String) -> QueryScore {
    QueryScore {
        id: id.to_string(),
        p: 0.0,
        r: 0.0,
        f1: 0.0,
        degenerate: false,
        rows: 0,
        candidates: 0,
        extract_invocations: 0,
        error: Some(error),
    }
}
