//! Schema induction: mine candidate fields per cluster, score schemas with
//! the quality function Q, and pick one from the constrained Pareto front
//! of [Q, -annotation time, -store size].

mod evaluate;
mod metrics;
mod mine;
mod nsga;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotator::{run_annotation, AnnotatorError, ExtractorRegistry};
use crate::corpus::{cluster_corpus, default_k, Clustering, Corpus, CorpusError, Document, KMeansParams};
use crate::index::StoreError;
use crate::schema::{FeasibilityLimits, Schema};

pub use evaluate::{modeled_cost, EvalContext, EvalSettings, Evaluation, Gene, MODELED_DOC_OVERHEAD};
pub use metrics::{
    bin_values, coverage, fleiss_kappa, fleiss_kappa_ratings, information_gain, information_gain_table, match_score,
    quality, Bin, Components, Kappa, QualityReport, QualityWeights,
};
pub use mine::{
    build_candidate_schemas, merge_pools, mine_field_candidates, mine_pool, profile_pool, snake_case, Candidate,
    CandidateSet, MinedField, MiningParams, Origin, LITE_MAX, STD_MAX,
};
pub use nsga::{
    constrained_dominates, crowding_distance, dominates, exhaustive_front, non_dominated_sort, nsga2_optimize,
    scalarize, select_index, select_schema, FrontMember, Genome, Nsga2Params, ParetoFront, ScalarWeights,
};

#[derive(Debug, Error)]
pub enum SchemabootError {
    #[error("every field pool is empty")]
    EmptyPool,
    #[error("quality weights {0:?} must be non-negative and sum to 1")]
    WeightsInvalid([f64; 4]),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("invalid optimizer parameters: {0}")]
    InvalidParams(String),
    #[error("no feasible schema; closest candidate violates: {}", reasons.join("; "))]
    NoFeasibleSchema { reasons: Vec<String> },
    #[error(transparent)]
    Annotator(#[from] AnnotatorError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InduceConfig {
    /// Cluster count; `None` picks it from the corpus size.
    pub k: Option<usize>,
    pub kmeans: KMeansParams,
    /// Documents sampled for scoring, spread over clusters.
    pub sample_cap: usize,
    pub mining: MiningParams,
    pub theta_cov: f64,
    pub weights: QualityWeights,
    pub limits: FeasibilityLimits,
    pub ga: Nsga2Params,
    pub selection: ScalarWeights,
    pub query_history: Vec<String>,
}

impl Default for InduceConfig {
    fn default() -> Self {
        InduceConfig {
            k: None,
            kmeans: KMeansParams::default(),
            sample_cap: 200,
            mining: MiningParams::default(),
            theta_cov: 0.5,
            weights: QualityWeights::default(),
            limits: FeasibilityLimits::default(),
            ga: Nsga2Params::default(),
            selection: ScalarWeights::default(),
            query_history: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Induction {
    pub clustering: Clustering,
    pub pool: Vec<MinedField>,
    pub candidates: CandidateSet,
    pub front: ParetoFront,
    pub selected: usize,
    pub schema: Schema,
    pub report: QualityReport,
    /// Measured wall-clock annotation time per sampled document for the
    /// selected schema; informational, not part of any objective.
    #[serde(skip)]
    pub measured_t_annot_seconds: f64,
}

/// Sample up to `cap` documents, taking clusters round-robin in corpus order.
fn stratified_sample(corpus: &Corpus, clustering: &Clustering, cap: usize) -> Vec<(Document, usize)> {
    let members: Vec<Vec<usize>> = (0..clustering.k).map(|j| clustering.members(j)).collect();
    let mut out = Vec::new();
    let limit = cap.min(corpus.len());
    let mut round = 0;
    while out.len() < limit {
        for (j, m) in members.iter().enumerate() {
            if let Some(&i) = m.get(round) {
                if out.len() < limit {
                    out.push((corpus.docs()[i].clone(), j));
                }
            }
        }
        round += 1;
    }
    out.sort_by(|a, b| a.0.doc_id.cmp(&b.0.doc_id));
    out
}

/// The whole induction stage over a corpus.
pub fn induce(corpus: &Corpus, registry: &ExtractorRegistry, config: &InduceConfig) -> Result<Induction, SchemabootError> {
    config.weights.check()?;
    let k = config.k.unwrap_or_else(|| default_k(corpus.len()));
    let clustering = cluster_corpus(corpus, k, config.ga.rng_seed, config.kmeans)?;
    let mining = MiningParams { day_first: registry.day_first, ..config.mining };
    let pools: Vec<Vec<MinedField>> = (0..clustering.k)
        .map(|j| {
            let docs: Vec<Document> = clustering.members(j).into_iter().map(|i| corpus.docs()[i].clone()).collect();
            mine_pool(&docs, config.sample_cap, &mining)
        })
        .collect();
    let merged = merge_pools(&pools);
    if merged.is_empty() {
        return Err(SchemabootError::EmptyPool);
    }
    let sample = stratified_sample(corpus, &clustering, config.sample_cap);
    let (docs, labels): (Vec<Document>, Vec<usize>) = sample.into_iter().unzip();
    let pool = profile_pool(&merged, &docs, registry.day_first);
    let candidates = build_candidate_schemas(&[pool.clone()])?;

    let settings = EvalSettings {
        weights: config.weights,
        limits: config.limits,
        theta_cov: config.theta_cov,
        history: config.query_history.clone(),
    };
    let specs: Vec<_> = pool.iter().map(|m| m.spec.clone()).collect();
    let mut ctx = EvalContext::new(specs.clone(), docs, labels, registry, settings)?;
    let seeds: Vec<Genome> = candidates.candidates.iter().map(|c| Genome::of_schema(&c.schema, &specs)).collect();
    for (c, g) in candidates.candidates.iter().zip(&seeds) {
        ctx.mark_granularity(g.genes().iter().map(|x| (x.0, x.1)).collect(), c.schema.granularity);
    }
    let mut candidates = candidates;
    for (c, g) in candidates.candidates.iter_mut().zip(&seeds) {
        c.report = ctx.evaluate(&g.genes())?.report;
    }
    let front = nsga2_optimize(&ctx, &seeds, &config.ga)?;
    let selected = select_index(&front, &config.selection).expect("front is non-empty");
    let member = &front.members[selected];

    let sample_corpus = ctx.sample();
    let started = Instant::now();
    run_annotation(sample_corpus, &member.schema, registry, 1)?;
    let measured = started.elapsed().as_secs_f64() / sample_corpus.len() as f64;

    Ok(Induction {
        clustering,
        pool,
        schema: member.schema.clone(),
        report: member.quality_report.clone(),
        candidates,
        selected,
        front,
        measured_t_annot_seconds: measured,
    })
}

/// Measured mean annotation seconds per document and store size ratio of
/// `schema` over `sample`.
pub fn estimate_costs(
    schema: &Schema,
    sample: &Corpus,
    registry: &ExtractorRegistry,
) -> Result<(f64, f64), SchemabootError> {
    if sample.len() < 5 {
        return Err(SchemabootError::InvalidSample(format!("{} documents, need at least 5", sample.len())));
    }
    let text_bytes = sample.total_text_bytes().max(1);
    let started = Instant::now();
    let batch = run_annotation(sample, schema, registry, 1)?;
    let t_annot = started.elapsed().as_secs_f64() / sample.len() as f64;
    let store = crate::index::build_store(&batch, schema, sample, "")?;
    Ok((t_annot, store.footprint().total() as f64 / text_bytes as f64))
}

/// Violated time and storage limits for measured costs, empty when feasible.
pub fn cost_violations(t_annot: f64, size_ratio: f64, limits: &FeasibilityLimits) -> Vec<String> {
    let mut out = Vec::new();
    if t_annot > limits.t_max_seconds {
        out.push(format!("t_annot_exceeded: {t_annot:.6} > {}", limits.t_max_seconds));
    }
    if size_ratio > limits.storage_ratio_rho {
        out.push(format!("storage_ratio_exceeded: {size_ratio:.6} > {}", limits.storage_ratio_rho));
    }
    out
}

/// Score an explicit schema on a sample, using its own tiers and one
/// subgroup level.
pub fn score_schema(
    schema: &Schema,
    sample: Vec<Document>,
    labels: Vec<usize>,
    registry: &ExtractorRegistry,
    settings: EvalSettings,
) -> Result<Evaluation, SchemabootError> {
    let ctx = EvalContext::new(schema.fields.clone(), sample, labels, registry, settings)?;
    let genes: Vec<Gene> = schema.fields.iter().enumerate().map(|(i, f)| (i, f.tier, 0)).collect();
    ctx.evaluate(&genes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Granularity;

    fn kilobyte_docs(n: usize) -> Corpus {
        let docs = (0..n)
            .map(|i| {
                let body = format!("Document {i} discusses the ruling at some length. ").repeat(25);
                Document::new(format!("d{i:02}"), body[..1000].to_string())
            })
            .collect();
        Corpus::from_documents(docs).unwrap()
    }

    #[test]
    fn empty_schema_costs_little_storage() {
        let schema = Schema::tiered("empty", Granularity::Lite, Vec::new());
        let (t, ratio) = estimate_costs(&schema, &kilobyte_docs(10), &ExtractorRegistry::default()).unwrap();
        assert!(t >= 0.0);
        assert!(ratio < 0.05, "{ratio}");
    }

    #[test]
    fn small_sample_is_rejected() {
        let schema = Schema::tiered("empty", Granularity::Lite, Vec::new());
        let err = estimate_costs(&schema, &kilobyte_docs(4), &ExtractorRegistry::default()).unwrap_err();
        assert!(matches!(err, SchemabootError::InvalidSample(_)));
    }

    #[test]
    fn limits_against_measured_costs() {
        let limits = FeasibilityLimits::default();
        assert!(cost_violations(0.01, 0.1, &limits).is_empty());
        let v = cost_violations(0.01, 0.31, &limits);
        assert_eq!(v.len(), 1);
        assert!(v[0].starts_with("storage_ratio_exceeded"));
    }
}
