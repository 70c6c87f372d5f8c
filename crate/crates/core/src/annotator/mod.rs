//! The annotation function: populate every schema field of a document from
//! its text, through built-in extractors or an external annotator process.

mod config;
mod dates;
mod external;
mod numbers;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Instant;

use rayon::prelude::*;
use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Document};
use crate::schema::{FieldSpec, Schema, ValueType};

pub use config::{ExtractorConfig, ExtractorKind, Normalization, KEYED_VALUE};
pub use dates::{parse_date, scan_dates, DateMatch};
pub use external::{
    check_transcript, external_annotate, request_lines, Endpoint, ExternalConfig, ExternalError,
    ExternalResponse, PROTOCOL_VERSION,
};
pub use numbers::{canonical_decimal, has_currency, parse_number, scan_numbers};

/// Values kept per field per document.
pub const MAX_VALUES: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnnotatorError {
    #[error("no extractor for field {0:?}")]
    ExtractorMissing(String),
    #[error("invalid extractor for field {field:?}: {reason}")]
    InvalidExtractor { field: String, reason: String },
    #[error("external annotator failed: {0}")]
    External(#[from] ExternalError),
}

/// Deterministic variations of the built-in annotator, used as the rater
/// ensemble for agreement estimates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Perturbation {
    /// Flip the case sensitivity of pattern and dictionary matching.
    pub flip_case: bool,
    /// Keep internal whitespace as found.
    pub keep_whitespace: bool,
    /// Extend a capture by one directly following punctuation character.
    pub trailing_punct: bool,
}

impl Perturbation {
    pub const NONE: Perturbation =
        Perturbation { flip_case: false, keep_whitespace: false, trailing_punct: false };

    /// The base annotator plus one member per perturbation axis.
    pub fn ensemble() -> Vec<Perturbation> {
        vec![
            Perturbation::NONE,
            Perturbation { flip_case: true, ..Perturbation::NONE },
            Perturbation { keep_whitespace: true, ..Perturbation::NONE },
            Perturbation { trailing_punct: true, ..Perturbation::NONE },
        ]
    }

    pub fn id(&self) -> String {
        let mut parts = vec!["builtin"];
        if self.flip_case {
            parts.push("case");
        }
        if self.keep_whitespace {
            parts.push("ws");
        }
        if self.trailing_punct {
            parts.push("punct");
        }
        parts.join("+")
    }
}

/// Fallback extractors per value type, used when a field carries no hint,
/// and the external endpoint for `external` fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorRegistry {
    #[serde(default)]
    pub defaults: BTreeMap<ValueType, ExtractorConfig>,
    #[serde(default = "day_first_default")]
    pub day_first: bool,
    #[serde(default)]
    pub external: Option<ExternalConfig>,
}

fn day_first_default() -> bool {
    true
}

impl Default for ExtractorRegistry {
    fn default() -> Self {
        let mut defaults = BTreeMap::new();
        defaults.insert(ValueType::Date, ExtractorConfig::of_kind(ExtractorKind::Date));
        defaults.insert(ValueType::Number, ExtractorConfig::of_kind(ExtractorKind::Number));
        ExtractorRegistry { defaults, day_first: true, external: None }
    }
}

impl ExtractorRegistry {
    pub fn resolve(&self, field: &FieldSpec) -> Option<ExtractorConfig> {
        field.hint.clone().or_else(|| self.defaults.get(&field.value_type).cloned())
    }
}

#[derive(Debug, Clone)]
enum Matcher {
    Capture(Regex),
    Dictionary { re: Regex, terms: HashMap<String, String> },
    Date,
    Number,
    External,
}

/// A field's extractor, compiled once and applied to many documents.
#[derive(Debug, Clone)]
pub struct CompiledField {
    pub name: String,
    pub value_type: ValueType,
    vocabulary: Option<BTreeSet<String>>,
    matcher: Matcher,
    normalization: Normalization,
    perturbation: Perturbation,
    day_first: bool,
}

/// Values for one field of one document, plus any type-validation warnings.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct FieldOutput {
    pub values: Vec<String>,
    pub warnings: Vec<String>,
}

impl CompiledField {
    pub fn compile(
        field: &FieldSpec,
        registry: &ExtractorRegistry,
        perturbation: Perturbation,
    ) -> Result<Self, AnnotatorError> {
        let cfg = registry
            .resolve(field)
            .ok_or_else(|| AnnotatorError::ExtractorMissing(field.name.clone()))?;
        let invalid = |reason: String| AnnotatorError::InvalidExtractor { field: field.name.clone(), reason };
        cfg.check().map_err(invalid)?;
        let base_insensitive = matches!(cfg.kind, ExtractorKind::KeyedPattern | ExtractorKind::Dictionary);
        let insensitive = base_insensitive != perturbation.flip_case;
        let matcher = match cfg.kind {
            ExtractorKind::KeyedPattern | ExtractorKind::Regex => {
                let p = cfg.pattern.as_deref().unwrap_or_default();
                let re = RegexBuilder::new(p)
                    .case_insensitive(insensitive)
                    .build()
                    .map_err(|e| invalid(e.to_string()))?;
                Matcher::Capture(re)
            }
            ExtractorKind::Dictionary => {
                let mut vocab: Vec<String> = cfg.vocabulary.clone().unwrap_or_default();
                vocab.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
                let alts: Vec<String> =
                    vocab.iter().map(|t| t.split_whitespace().map(regex::escape).collect::<Vec<_>>().join(r"\s+")).collect();
                let re = RegexBuilder::new(&format!(r"\b(?:{})\b", alts.join("|")))
                    .case_insensitive(insensitive)
                    .build()
                    .map_err(|e| invalid(e.to_string()))?;
                let terms = vocab
                    .iter()
                    .map(|t| (squash(&t.to_lowercase()), t.clone()))
                    .collect();
                Matcher::Dictionary { re, terms }
            }
            ExtractorKind::Date => Matcher::Date,
            ExtractorKind::Number => Matcher::Number,
            ExtractorKind::External => Matcher::External,
        };
        let mut normalization = cfg.normalization;
        if perturbation.keep_whitespace {
            normalization.collapse_whitespace = false;
        }
        Ok(CompiledField {
            name: field.name.clone(),
            value_type: field.value_type,
            vocabulary: field
                .vocabulary
                .as_ref()
                .map(|v| v.iter().map(|s| Normalization::default().apply(s)).collect()),
            matcher,
            normalization,
            perturbation,
            day_first: registry.day_first,
        })
    }

    pub fn is_external(&self) -> bool {
        matches!(self.matcher, Matcher::External)
    }

    /// Raw matches in text order, before normalization.
    fn raw_matches(&self, text: &str) -> Vec<String> {
        match &self.matcher {
            Matcher::Capture(re) => re
                .captures_iter(text)
                .filter_map(|c| c.get(1))
                .map(|m| {
                    let mut end = m.end();
                    if self.perturbation.trailing_punct {
                        if let Some(ch) = text[end..].chars().next() {
                            if ch.is_ascii_punctuation() {
                                end += ch.len_utf8();
                            }
                        }
                    }
                    text[m.start()..end].to_string()
                })
                .collect(),
            Matcher::Dictionary { re, terms } => re
                .find_iter(text)
                .map(|m| {
                    let key = squash(&m.as_str().to_lowercase());
                    terms.get(&key).cloned().unwrap_or_else(|| m.as_str().to_string())
                })
                .collect(),
            Matcher::Date => scan_dates(text, self.day_first).into_iter().map(|m| m.iso).collect(),
            Matcher::Number => scan_numbers(text).into_iter().map(|t| t.2).collect(),
            Matcher::External => Vec::new(),
        }
    }

    pub fn extract(&self, text: &str) -> FieldOutput {
        let raw = self.raw_matches(text);
        self.finish(raw.iter().map(String::as_str))
    }

    /// Normalize, type-check, dedupe and cap a list of raw values.
    pub fn finish<'a>(&self, raw: impl IntoIterator<Item = &'a str>) -> FieldOutput {
        let mut out = FieldOutput::default();
        for r in raw {
            let norm = self.normalization.apply(r);
            if norm.is_empty() {
                continue;
            }
            let Some(v) = self.coerce(&norm, &mut out.warnings) else {
                continue;
            };
            if !out.values.contains(&v) {
                if out.values.len() == MAX_VALUES {
                    out.warnings.push(format!("{}: more than {MAX_VALUES} values, truncated", self.name));
                    break;
                }
                out.values.push(v);
            }
        }
        out
    }

    fn coerce(&self, v: &str, warnings: &mut Vec<String>) -> Option<String> {
        match self.value_type {
            ValueType::Date => {
                let iso = parse_date(v, self.day_first);
                if iso.is_none() {
                    warnings.push(format!("{}: dropped unparseable date {v:?}", self.name));
                }
                iso
            }
            ValueType::Number => {
                let n = parse_number(v);
                if n.is_none() {
                    warnings.push(format!("{}: dropped unparseable number {v:?}", self.name));
                }
                n
            }
            ValueType::Categorical => {
                if let Some(vocab) = &self.vocabulary {
                    if !vocab.contains(v) {
                        warnings.push(format!("{}: {v:?} outside vocabulary", self.name));
                    }
                }
                Some(v.to_string())
            }
            ValueType::String | ValueType::StringSet => Some(v.to_string()),
        }
    }
}

fn squash(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub doc_id: String,
    /// Field name → normalized values in text order; empty means null.
    pub values: BTreeMap<String, Vec<String>>,
    pub annotator_id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// Wall-clock time; kept out of the serialized form so batches are
    /// reproducible.
    #[serde(skip)]
    pub elapsed_seconds: f64,
}

impl AnnotationRecord {
    pub fn get(&self, field: &str) -> &[String] {
        self.values.get(field).map_or(&[], Vec::as_slice)
    }

    pub fn populated(&self) -> usize {
        self.values.values().filter(|v| !v.is_empty()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFailure {
    pub doc_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationBatch {
    pub schema_id: String,
    pub records: Vec<AnnotationRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<AnnotationFailure>,
    #[serde(skip)]
    pub elapsed_seconds: f64,
}

impl AnnotationBatch {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("batch serializes")
    }

    pub fn record(&self, doc_id: &str) -> Option<&AnnotationRecord> {
        self.records.iter().find(|r| r.doc_id == doc_id)
    }
}

/// Something that can annotate documents against a schema.
pub trait Annotator: Sync {
    fn id(&self) -> String;
    fn annotate(&self, doc: &Document, schema: &Schema) -> Result<AnnotationRecord, AnnotatorError>;
}

/// The built-in annotator: registry defaults plus field hints, optionally
/// perturbed.
#[derive(Debug, Clone, Default)]
pub struct BuiltinAnnotator {
    pub registry: ExtractorRegistry,
    pub perturbation: Perturbation,
}

impl BuiltinAnnotator {
    pub fn new(registry: ExtractorRegistry) -> Self {
        BuiltinAnnotator { registry, perturbation: Perturbation::NONE }
    }

    pub fn perturbed(registry: ExtractorRegistry, perturbation: Perturbation) -> Self {
        BuiltinAnnotator { registry, perturbation }
    }
}

impl Annotator for BuiltinAnnotator {
    fn id(&self) -> String {
        self.perturbation.id()
    }

    fn annotate(&self, doc: &Document, schema: &Schema) -> Result<AnnotationRecord, AnnotatorError> {
        let mut rec = annotate_document(doc, schema, &self.registry_for_perturbation())?;
        rec.annotator_id = self.id();
        Ok(rec)
    }
}

impl BuiltinAnnotator {
    fn registry_for_perturbation(&self) -> PerturbedRegistry<'_> {
        PerturbedRegistry { registry: &self.registry, perturbation: self.perturbation }
    }
}

#[doc(hidden)]
pub struct PerturbedRegistry<'a> {
    registry: &'a ExtractorRegistry,
    perturbation: Perturbation,
}

/// Either a plain registry or a registry with an annotator perturbation.
pub trait RegistryView {
    fn registry(&self) -> &ExtractorRegistry;
    fn perturbation(&self) -> Perturbation {
        Perturbation::NONE
    }
}

impl RegistryView for ExtractorRegistry {
    fn registry(&self) -> &ExtractorRegistry {
        self
    }
}

impl RegistryView for PerturbedRegistry<'_> {
    fn registry(&self) -> &ExtractorRegistry {
        self.registry
    }
    fn perturbation(&self) -> Perturbation {
        self.perturbation
    }
}

/// Every field of `schema`, compiled.
pub fn compile_schema(
    schema: &Schema,
    registry: &ExtractorRegistry,
    perturbation: Perturbation,
) -> Result<Vec<CompiledField>, AnnotatorError> {
    schema.fields.iter().map(|f| CompiledField::compile(f, registry, perturbation)).collect()
}

fn annotate_builtin(doc: &Document, compiled: &[CompiledField], annotator_id: &str) -> AnnotationRecord {
    let started = Instant::now();
    let mut values = BTreeMap::new();
    let mut warnings = Vec::new();
    for f in compiled {
        let out = if f.is_external() { FieldOutput::default() } else { f.extract(&doc.text) };
        warnings.extend(out.warnings);
        values.insert(f.name.clone(), out.values);
    }
    AnnotationRecord {
        doc_id: doc.doc_id.clone(),
        values,
        annotator_id: annotator_id.to_string(),
        warnings,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    }
}

fn merge_external(rec: &mut AnnotationRecord, compiled: &[CompiledField], answer: &BTreeMap<String, Vec<String>>) {
    for f in compiled.iter().filter(|f| f.is_external()) {
        let out = f.finish(answer.get(&f.name).into_iter().flatten().map(String::as_str));
        rec.warnings.extend(out.warnings);
        rec.values.insert(f.name.clone(), out.values);
    }
}

fn external_fields(schema: &Schema, compiled: &[CompiledField]) -> Vec<FieldSpec> {
    compiled
        .iter()
        .filter(|c| c.is_external())
        .filter_map(|c| schema.field(&c.name).cloned())
        .collect()
}

/// Annotate one document. Deterministic for built-in extractors.
pub fn annotate_document(
    doc: &Document,
    schema: &Schema,
    registry: &impl RegistryView,
) -> Result<AnnotationRecord, AnnotatorError> {
    let compiled = compile_schema(schema, registry.registry(), registry.perturbation())?;
    let mut rec = annotate_builtin(doc, &compiled, &registry.perturbation().id());
    let ext = external_fields(schema, &compiled);
    if !ext.is_empty() {
        let cfg = registry
            .registry()
            .external
            .as_ref()
            .ok_or_else(|| AnnotatorError::ExtractorMissing(ext[0].name.clone()))?;
        let resp = external_annotate(&[doc], &ext, cfg)?;
        if let Some(e) = resp.errors.get(&doc.doc_id) {
            return Err(AnnotatorError::External(ExternalError::Unreachable(e.clone())));
        }
        merge_external(&mut rec, &compiled, resp.values.get(&doc.doc_id).unwrap_or(&BTreeMap::new()));
        rec.annotator_id = format!("{}+external", rec.annotator_id);
    }
    Ok(rec)
}

/// Annotate a whole corpus. Record order follows corpus order whatever the
/// parallelism; external failures are collected per document.
pub fn run_annotation(
    corpus: &Corpus,
    schema: &Schema,
    registry: &ExtractorRegistry,
    parallelism: usize,
) -> Result<AnnotationBatch, AnnotatorError> {
    let started = Instant::now();
    let compiled = compile_schema(schema, registry, Perturbation::NONE)?;
    let ext = external_fields(schema, &compiled);
    if !ext.is_empty() && registry.external.is_none() {
        return Err(AnnotatorError::ExtractorMissing(ext[0].name.clone()));
    }
    let id = if ext.is_empty() { "builtin".to_string() } else { "builtin+external".to_string() };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .expect("thread pool");
    let mut records: Vec<AnnotationRecord> = pool.install(|| {
        corpus.docs().par_iter().map(|d| annotate_builtin(d, &compiled, &id)).collect()
    });
    let mut failures = Vec::new();
    if let Some(cfg) = registry.external.as_ref().filter(|_| !ext.is_empty()) {
        let docs: Vec<&Document> = corpus.docs().iter().collect();
        match external_annotate(&docs, &ext, cfg) {
            Ok(resp) => {
                for rec in &mut records {
                    if let Some(e) = resp.errors.get(&rec.doc_id) {
                        failures.push(AnnotationFailure { doc_id: rec.doc_id.clone(), error: e.clone() });
                    } else if let Some(v) = resp.values.get(&rec.doc_id) {
                        merge_external(rec, &compiled, v);
                    }
                }
            }
            Err(e) => {
                failures.extend(
                    records.iter().map(|r| AnnotationFailure { doc_id: r.doc_id.clone(), error: e.to_string() }),
                );
            }
        }
    }
    Ok(AnnotationBatch {
        schema_id: schema.schema_id.clone(),
        records,
        failures,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{Granularity, Tier};

    fn court_schema() -> Schema {
        Schema::tiered(
            "court",
            Granularity::Lite,
            vec![
                FieldSpec::new("court", ValueType::Categorical, Tier::Fast).with_hint(ExtractorConfig::keyed("Court")),
                FieldSpec::new("judge", ValueType::String, Tier::Sem).with_hint(ExtractorConfig::keyed("Judge")),
            ],
        )
    }

    #[test]
    fn keyed_patterns_on_one_line() {
        let doc = Document::new("d", "Court: High Court of Australia. Judge: Smith J.");
        let rec = annotate_document(&doc, &court_schema(), &ExtractorRegistry::default()).unwrap();
        assert_eq!(rec.get("court"), ["high court of australia"]);
        assert_eq!(rec.get("judge"), ["smith j"]);
    }

    #[test]
    fn empty_document_is_all_null() {
        let rec = annotate_document(&Document::new("d", ""), &court_schema(), &ExtractorRegistry::default()).unwrap();
        assert!(rec.values.values().all(Vec::is_empty));
        assert_eq!(rec.values.len(), 2);
    }

    #[test]
    fn date_field_normalizes_to_iso() {
        let s = Schema::tiered("d", Granularity::Lite, vec![FieldSpec::new("filed", ValueType::Date, Tier::Fast)]);
        let rec = annotate_document(&Document::new("d", "filed on 03 March 2004"), &s, &ExtractorRegistry::default())
            .unwrap();
        assert_eq!(rec.get("filed"), ["2004-03-03"]);
    }

    #[test]
    fn missing_extractor() {
        let s = Schema::tiered("m", Granularity::Lite, vec![FieldSpec::new("topic", ValueType::Categorical, Tier::Fast)]);
        assert_eq!(
            annotate_document(&Document::new("d", "x"), &s, &ExtractorRegistry::default()).unwrap_err(),
            AnnotatorError::ExtractorMissing("topic".into())
        );
    }

    #[test]
    fn unparseable_typed_values_dropped_with_warning() {
        let s = Schema::tiered(
            "t",
            Granularity::Lite,
            vec![FieldSpec::new("amount", ValueType::Number, Tier::Fast).with_hint(ExtractorConfig::keyed("Amount"))],
        );
        let rec = annotate_document(&Document::new("d", "Amount: unknown\nAmount: $1,250"), &s, &ExtractorRegistry::default())
            .unwrap();
        assert_eq!(rec.get("amount"), ["1250"]);
        assert_eq!(rec.warnings.len(), 1);
    }

    #[test]
    fn multi_match_keeps_distinct_in_order_capped() {
        let text: String = (0..40).map(|i| format!("Tag: t{} ; Tag: t{};\n", i % 20, i % 20)).collect();
        let s = Schema::tiered(
            "m",
            Granularity::Lite,
            vec![
                FieldSpec::new("n", ValueType::Number, Tier::Fast),
                FieldSpec::new("tag", ValueType::StringSet, Tier::Sem).with_hint(ExtractorConfig::keyed("Tag")),
            ],
        );
        let rec = annotate_document(&Document::new("d", text), &s, &ExtractorRegistry::default()).unwrap();
        let tags = rec.get("tag");
        assert_eq!(tags.len(), MAX_VALUES);
        assert_eq!(tags[0], "t0");
        assert_eq!(tags[15], "t15");
    }

    #[test]
    fn dictionary_matches_whole_terms() {
        let s = Schema::tiered(
            "dict",
            Granularity::Lite,
            vec![FieldSpec::new("court", ValueType::Categorical, Tier::Fast)
                .with_hint(ExtractorConfig::dictionary(vec!["High Court".into(), "Federal Court".into()]))],
        );
        let rec = annotate_document(
            &Document::new("d", "heard in the high  court, not the Federal Courtroom"),
            &s,
            &ExtractorRegistry::default(),
        )
        .unwrap();
        assert_eq!(rec.get("court"), ["high court"]);
    }

    #[test]
    fn perturbations_differ_only_at_edges() {
        let f = FieldSpec::new("judge", ValueType::String, Tier::Sem).with_hint(ExtractorConfig::keyed("Judge"));
        let reg = ExtractorRegistry::default();
        let text = "judge: Smith  J. rest";
        let outs: Vec<Vec<String>> = Perturbation::ensemble()
            .into_iter()
            .map(|p| CompiledField::compile(&f, &reg, p).unwrap().extract(text).values)
            .collect();
        assert_eq!(outs[0], vec!["smith j"]);
        assert_eq!(outs[1], Vec::<String>::new()); // case-sensitive label misses "judge"
        assert_eq!(outs[2], vec!["smith  j"]);
        assert_eq!(outs[3], vec!["smith j."]);
    }

    #[test]
    fn run_annotation_is_order_stable() {
        let docs: Vec<Document> =
            (0..30).map(|i| Document::new(format!("d{i:02}"), format!("Court: C{} Judge: J{}", i % 3, i))).collect();
        let corpus = Corpus::from_documents(docs).unwrap();
        let a = run_annotation(&corpus, &court_schema(), &ExtractorRegistry::default(), 1).unwrap();
        let b = run_annotation(&corpus, &court_schema(), &ExtractorRegistry::default(), 8).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.records.len(), 30);
        assert_eq!(a.records[7].doc_id, "d07");
    }
}
