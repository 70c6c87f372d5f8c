//! Scoring of decoded genomes against a fixed document sample.
//!
//! Extraction results for every pool field and every ensemble member are
//! computed once; a schema evaluation only recombines them. Annotation time
//! inside the optimizer is a deterministic cost model (per extractor kind
//! and text byte) so that optimization results are reproducible.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use serde::Serialize;

use super::metrics::{bin_values, coverage, fleiss_kappa_ratings, information_gain, quality, Components, QualityReport, QualityWeights};
use super::SchemabootError;
use crate::annotator::{AnnotationBatch, AnnotationRecord, CompiledField, ExtractorKind, ExtractorRegistry, Perturbation};
use crate::corpus::{embed, sha256_hex, Corpus, Document};
use crate::index::build_store;
use crate::schema::{structural_feasible, validate_schema, FeasibilityLimits, FieldSpec, Granularity, Hierarchy, Schema, Tier};

/// One included field of a decoded genome: pool index, tier, subgroup.
pub type Gene = (usize, Tier, usize);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub schema: Schema,
    /// `[q, -t_annot, -size]`, all maximized.
    pub objectives: [f64; 3],
    /// Total constraint violation; 0 means feasible.
    pub violation: f64,
    pub reasons: Vec<String>,
    pub report: Option<QualityReport>,
}

impl Evaluation {
    pub fn feasible(&self) -> bool {
        self.violation == 0.0
    }
}

/// Modeled extraction cost: seconds per document and per text byte.
pub fn modeled_cost(kind: ExtractorKind, vocabulary: usize) -> (f64, f64) {
    match kind {
        ExtractorKind::KeyedPattern | ExtractorKind::Regex => (2e-6, 4e-8),
        ExtractorKind::Dictionary => (2e-6, 2e-8 * (1.0 + (vocabulary.max(1) as f64).ln())),
        ExtractorKind::Date => (2e-6, 1.2e-7),
        ExtractorKind::Number => (2e-6, 8e-8),
        ExtractorKind::External => (1e-2, 2e-6),
    }
}

/// Violation charged per structural defect; larger than any budget
/// overrun so that well-formed schemas always rank first.
const INVALID_PENALTY: f64 = 1e6;

/// Per-document base cost independent of the schema.
pub const MODELED_DOC_OVERHEAD: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct EvalSettings {
    pub weights: QualityWeights,
    pub limits: FeasibilityLimits,
    pub theta_cov: f64,
    pub history: Vec<String>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            weights: QualityWeights::default(),
            limits: FeasibilityLimits::default(),
            theta_cov: 0.5,
            history: Vec::new(),
        }
    }
}

pub struct EvalContext {
    pub pool: Vec<FieldSpec>,
    pub settings: EvalSettings,
    sample: Corpus,
    labels: Vec<usize>,
    /// `values[field][member][doc]`; member 0 is the unperturbed annotator.
    values: Vec<Vec<Vec<Vec<String>>>>,
    /// `match_cos[query][field]`, mapped to [0, 1].
    match_cos: Vec<Vec<f64>>,
    cost: Vec<f64>,
    text_bytes: usize,
    granularity: BTreeMap<Vec<(usize, Tier)>, Granularity>,
    cache: Mutex<HashMap<Vec<(usize, Tier)>, Evaluation>>,
}

impl EvalContext {
    /// `labels[i]` is the cluster of `sample[i]`.
    pub fn new(
        pool: Vec<FieldSpec>,
        sample: Vec<Document>,
        labels: Vec<usize>,
        registry: &ExtractorRegistry,
        settings: EvalSettings,
    ) -> Result<Self, SchemabootError> {
        settings.weights.check()?;
        if sample.is_empty() {
            return Err(SchemabootError::InvalidSample("empty sample".into()));
        }
        if labels.len() != sample.len() {
            return Err(SchemabootError::InvalidSample("one cluster label per sample document required".into()));
        }
        let sample = Corpus::from_documents(sample).map_err(|e| SchemabootError::InvalidSample(e.to_string()))?;
        let ensemble = Perturbation::ensemble();
        let text_bytes = sample.total_text_bytes().max(1);
        let mean_bytes = text_bytes as f64 / sample.len() as f64;
        let mut values = Vec::with_capacity(pool.len());
        let mut cost = Vec::with_capacity(pool.len());
        for f in &pool {
            let mut per_member = Vec::with_capacity(ensemble.len());
            for p in &ensemble {
                let c = CompiledField::compile(f, registry, *p)?;
                if c.is_external() {
                    return Err(SchemabootError::InvalidSample(format!(
                        "field {:?} needs an external annotator, which induction does not call",
                        f.name
                    )));
                }
                per_member.push(sample.docs().iter().map(|d| c.extract(&d.text).values).collect::<Vec<_>>());
            }
            values.push(per_member);
            let cfg = registry.resolve(f).expect("compiled above");
            let (per_doc, per_byte) = modeled_cost(cfg.kind, cfg.vocabulary.as_ref().map_or(0, Vec::len));
            cost.push(per_doc + per_byte * mean_bytes);
        }
        let sigs: Vec<_> = pool.iter().map(|f| embed(&f.signature())).collect();
        let match_cos = settings
            .history
            .iter()
            .map(|q| {
                let e = embed(q);
                sigs.iter().map(|s| (e.cosine(s) + 1.0) / 2.0).collect()
            })
            .collect();
        Ok(EvalContext {
            pool,
            settings,
            sample,
            labels,
            values,
            match_cos,
            cost,
            text_bytes,
            granularity: BTreeMap::new(),
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn sample(&self) -> &Corpus {
        &self.sample
    }

    /// Name the schemas decoded from these field sets with a granularity.
    pub fn mark_granularity(&mut self, fields: Vec<(usize, Tier)>, g: Granularity) {
        self.granularity.entry(fields).or_insert(g);
    }

    pub fn evaluations(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    /// Evaluate a gene list (sorted by pool index). Scores depend only on
    /// the (field, tier) set and are cached by it; the hierarchy limits are
    /// checked per gene list.
    pub fn evaluate(&self, genes: &[Gene]) -> Result<Evaluation, SchemabootError> {
        let key: Vec<(usize, Tier)> = genes.iter().map(|g| (g.0, g.1)).collect();
        let cached = self.cache.lock().expect("cache lock").get(&key).cloned();
        let core = match cached {
            Some(c) => c,
            None => {
                let flat: Vec<Gene> = key.iter().map(|&(i, t)| (i, t, 0)).collect();
                let c = self.score(&flat)?;
                self.cache.lock().expect("cache lock").insert(key, c.clone());
                c
            }
        };
        let mut e = Evaluation { schema: self.decode(genes), ..core };
        if e.report.is_some() {
            let limits = &self.settings.limits;
            let structure = structural_feasible(&e.schema, limits);
            e.reasons.extend(structure.reasons.iter().map(|r| r.to_string()));
            e.violation += (structure.depth.saturating_sub(limits.max_depth)) as f64;
            e.violation += (structure.branching.saturating_sub(limits.max_branching)) as f64;
        }
        Ok(e)
    }

    pub fn decode(&self, genes: &[Gene]) -> Schema {
        let fields: Vec<FieldSpec> = genes
            .iter()
            .map(|&(i, tier, _)| FieldSpec { tier, ..self.pool[i].clone() })
            .collect();
        let groups: Vec<usize> = genes.iter().map(|g| g.2).collect();
        let hierarchy = Hierarchy::grouped(&fields, &groups, self.settings.limits.max_branching);
        let key: Vec<(usize, Tier)> = genes.iter().map(|g| (g.0, g.1)).collect();
        let granularity = self.granularity.get(&key).copied().unwrap_or(Granularity::Evolved);
        let mut schema = Schema { schema_id: String::new(), granularity, fields, hierarchy };
        schema.canonicalize();
        let body = serde_json::to_string(&(&schema.fields, &schema.hierarchy)).expect("serializable");
        schema.schema_id = format!("schema-{}", &sha256_hex(body.as_bytes())[..12]);
        schema
    }

    fn score(&self, genes: &[Gene]) -> Result<Evaluation, SchemabootError> {
        let schema = self.decode(genes);
        let mut reasons = Vec::new();
        let mut violation = 0.0;
        let report = validate_schema(&schema);
        for v in &report.violations {
            reasons.push(format!("{}: {}", v.code, v.detail));
            violation += INVALID_PENALTY;
        }
        let docs = self.sample.len();
        for &(i, tier, _) in genes {
            if tier == Tier::Fast && self.values[i][0].iter().any(|v| v.len() > 1) {
                reasons.push(format!("multi_value_fast: {}", self.pool[i].name));
                violation += INVALID_PENALTY;
            }
        }
        if violation > 0.0 {
            return Ok(Evaluation { schema, objectives: [0.0; 3], violation, reasons, report: None });
        }

        let mut flags = Vec::new();
        let populated: Vec<Vec<bool>> =
            genes.iter().map(|&(i, _, _)| self.values[i][0].iter().map(|v| !v.is_empty()).collect()).collect();
        let cov = coverage(&populated, docs, self.settings.theta_cov);

        let sem: Vec<usize> = genes.iter().filter(|g| g.1 == Tier::Sem).map(|g| g.0).collect();
        let distinct_labels = {
            let mut l = self.labels.clone();
            l.sort_unstable();
            l.dedup();
            l.len()
        };
        let disc = if sem.is_empty() {
            flags.push("no_sem_fields".to_string());
            0.0
        } else if distinct_labels < 2 {
            flags.push("single_cluster".to_string());
            0.0
        } else {
            sem.iter()
                .map(|&i| {
                    let bins = bin_values(&self.pool[i], &self.values[i][0]);
                    information_gain(bins.into_iter().zip(self.labels.iter().copied())).1
                })
                .sum::<f64>()
                / sem.len() as f64
        };

        let ratings: Vec<Vec<&[String]>> = genes
            .iter()
            .flat_map(|&(i, _, _)| {
                (0..docs).map(move |d| self.values[i].iter().map(|m| m[d].as_slice()).collect::<Vec<_>>())
            })
            .collect();
        if ratings.len() < 10 {
            flags.push("small_consistency_sample".to_string());
        }
        let kappa = fleiss_kappa_ratings(&ratings)?;
        if kappa.degenerate {
            flags.push("degenerate_consistency".to_string());
        }
        let cons = kappa.clamped();

        let match_ = if self.match_cos.is_empty() {
            flags.push("empty_query_history".to_string());
            0.5
        } else {
            self.match_cos
                .iter()
                .map(|row| genes.iter().map(|g| row[g.0]).fold(f64::NEG_INFINITY, f64::max))
                .sum::<f64>()
                / self.match_cos.len() as f64
        };

        let t_annot = MODELED_DOC_OVERHEAD + genes.iter().map(|g| self.cost[g.0]).sum::<f64>();
        let size = self.size_ratio(&schema, genes)?;
        let q = quality(&self.settings.weights, Components { cov, disc, cons, match_ }, t_annot, size, flags)?;

        let limits = &self.settings.limits;
        if t_annot > limits.t_max_seconds {
            reasons.push(format!("t_annot_exceeded: {t_annot:.6} > {}", limits.t_max_seconds));
            violation += (t_annot - limits.t_max_seconds) / limits.t_max_seconds;
        }
        if size > limits.storage_ratio_rho {
            reasons.push(format!("storage_ratio_exceeded: {size:.6} > {}", limits.storage_ratio_rho));
            violation += (size - limits.storage_ratio_rho) / limits.storage_ratio_rho;
        }
        Ok(Evaluation { schema, objectives: [q.q, -t_annot, -size], violation, reasons, report: Some(q) })
    }

    /// Store footprint over the sample divided by the sample's text bytes.
    fn size_ratio(&self, schema: &Schema, genes: &[Gene]) -> Result<f64, SchemabootError> {
        let records = self
            .sample
            .docs()
            .iter()
            .enumerate()
            .map(|(d, doc)| AnnotationRecord {
                doc_id: doc.doc_id.clone(),
                values: genes
                    .iter()
                    .map(|&(i, _, _)| (self.pool[i].name.clone(), self.values[i][0][d].clone()))
                    .collect(),
                annotator_id: "builtin".into(),
                warnings: Vec::new(),
                elapsed_seconds: 0.0,
            })
            .collect();
        let batch = AnnotationBatch { schema_id: schema.schema_id.clone(), records, failures: Vec::new(), elapsed_seconds: 0.0 };
        let store = build_store(&batch, schema, &self.sample, "")?;
        Ok(store.footprint().total() as f64 / self.text_bytes as f64)
    }
}
