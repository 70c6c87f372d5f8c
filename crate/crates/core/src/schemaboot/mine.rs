//! Field candidate mining and candidate schema construction.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::SchemabootError;
use crate::annotator::{
    has_currency, parse_date, parse_number, scan_dates, CompiledField, ExtractorConfig, ExtractorKind,
    ExtractorRegistry, Perturbation,
};
use crate::corpus::{embed, tokenize, Document};
use crate::schema::{valid_field_name, FieldSpec, Granularity, Schema, Tier, ValueType};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningParams {
    /// Fraction of a cluster's documents a keyed or typed pattern must occur in.
    pub min_support: f64,
    /// Fraction of documents a capitalized n-gram must occur in.
    pub entity_min_df: f64,
    pub max_entities: usize,
    pub day_first: bool,
}

impl Default for MiningParams {
    fn default() -> Self {
        MiningParams { min_support: 0.3, entity_min_df: 0.1, max_entities: 50, day_first: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Keyed,
    Typed,
    Entity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinedField {
    pub spec: FieldSpec,
    /// Fraction of the mined documents the field was found in.
    pub support: f64,
    pub origin: Origin,
}

fn label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?m)(?:^|[.;!?][ \t]+)[ \t]*([A-Z][A-Za-z]*(?:[ \t]+[A-Za-z]+){0,3})[ \t]*(?::|[ \t]-[ \t])[ \t]*\S")
            .expect("label pattern")
    })
}

fn entity_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\b[A-Z][a-z]+(?:[ \t]+(?:of[ \t]+|the[ \t]+)?[A-Z][a-z]+){0,3}\b").expect("entity pattern")
    })
}

const CURRENCY_PATTERN: &str = r"([$€£][ \t]?\d[\d,]*(?:\.\d+)?)";

pub fn snake_case(label: &str) -> String {
    tokenize(label).join("_")
}

/// Candidate fields of one cluster, with their support.
pub fn mine_pool(docs: &[Document], sample_cap: usize, params: &MiningParams) -> Vec<MinedField> {
    let docs = &docs[..docs.len().min(sample_cap.max(1))];
    if docs.is_empty() {
        return Vec::new();
    }
    let n = docs.len() as f64;
    let mut out = Vec::new();

    // keyed labels: document frequency per normalized label, most common surface
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    let mut surfaces: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for d in docs {
        let mut seen = BTreeSet::new();
        for c in label_re().captures_iter(&d.text) {
            let surface = c[1].split_whitespace().collect::<Vec<_>>().join(" ");
            let key = snake_case(&surface);
            *surfaces.entry(key.clone()).or_default().entry(surface).or_default() += 1;
            seen.insert(key);
        }
        for k in seen {
            *df.entry(k).or_default() += 1;
        }
    }
    let mut keyed_labels = Vec::new();
    for (key, count) in &df {
        if (*count as f64) / n + 1e-12 < params.min_support || !valid_field_name(key) {
            continue;
        }
        let surface = surfaces[key].iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(s, _)| s.clone()).unwrap();
        keyed_labels.push(surface.clone());
        let hint = ExtractorConfig::keyed(&surface);
        let spec = infer(key, &surface.to_lowercase(), hint, docs, params.day_first);
        out.push(MinedField { support: *count as f64 / n, spec, origin: Origin::Keyed });
    }

    // typed families, unless a keyed field already carries the type
    let has_type = |t: ValueType| out.iter().any(|m: &MinedField| m.spec.value_type == t);
    let typed_dates = docs.iter().filter(|d| !scan_dates(&d.text, params.day_first).is_empty()).count();
    let typed_money = docs.iter().filter(|d| has_currency(&d.text)).count();
    let mut typed = Vec::new();
    if !has_type(ValueType::Date) && typed_dates as f64 / n + 1e-12 >= params.min_support {
        let spec = FieldSpec::new("dates", ValueType::Date, Tier::Detail)
            .with_description("dates mentioned in the text")
            .with_hint(ExtractorConfig::of_kind(ExtractorKind::Date));
        typed.push(MinedField { support: typed_dates as f64 / n, spec, origin: Origin::Typed });
    }
    if !has_type(ValueType::Number) && typed_money as f64 / n + 1e-12 >= params.min_support {
        let spec = FieldSpec::new("amounts", ValueType::Number, Tier::Detail)
            .with_description("money amounts mentioned in the text")
            .with_hint(ExtractorConfig::regex(CURRENCY_PATTERN));
        typed.push(MinedField { support: typed_money as f64 / n, spec, origin: Origin::Typed });
    }
    for mut t in typed {
        t.spec.tier = typed_tier(&t.spec, docs, params.day_first);
        out.push(t);
    }

    if let Some(e) = mine_entities(docs, &keyed_labels, params) {
        out.push(e);
    }
    out.sort_by(|a, b| a.spec.name.cmp(&b.spec.name));
    out
}

/// Candidate field specs of one cluster.
pub fn mine_field_candidates(docs: &[Document], sample_cap: usize, params: &MiningParams) -> Vec<FieldSpec> {
    mine_pool(docs, sample_cap, params).into_iter().map(|m| m.spec).collect()
}

fn base_values(spec: &FieldSpec, docs: &[Document], day_first: bool) -> Vec<Vec<String>> {
    let registry = ExtractorRegistry { day_first, ..ExtractorRegistry::default() };
    match CompiledField::compile(spec, &registry, Perturbation::NONE) {
        Ok(c) => docs.iter().map(|d| c.extract(&d.text).values).collect(),
        Err(_) => vec![Vec::new(); docs.len()],
    }
}

fn typed_tier(spec: &FieldSpec, docs: &[Document], day_first: bool) -> Tier {
    let vals = base_values(spec, docs, day_first);
    if vals.iter().any(|v| v.len() > 1) {
        Tier::Detail
    } else {
        Tier::Fast
    }
}

/// Infer type and tier of a keyed field from its values on `docs`.
fn infer(name: &str, description: &str, hint: ExtractorConfig, docs: &[Document], day_first: bool) -> FieldSpec {
    let raw = FieldSpec::new(name, ValueType::String, Tier::Detail).with_description(description).with_hint(hint);
    let vals = base_values(&raw, docs, day_first);
    let present: Vec<&Vec<String>> = vals.iter().filter(|v| !v.is_empty()).collect();
    let all: Vec<&String> = present.iter().flat_map(|v| v.iter()).collect();
    let mut spec = raw;
    if all.is_empty() {
        return spec;
    }
    let frac = |ok: &dyn Fn(&str) -> bool| all.iter().filter(|s| ok(s)).count() as f64 / all.len() as f64;
    let multi = present.iter().any(|v| v.len() > 1);
    if frac(&|s| parse_date(s, day_first).is_some()) >= 0.8 {
        spec.value_type = ValueType::Date;
    } else if frac(&|s| parse_number(s).is_some()) >= 0.8 {
        spec.value_type = ValueType::Number;
    } else {
        let distinct: BTreeSet<&str> = all.iter().map(|s| s.as_str()).collect();
        let avg_tokens = all.iter().map(|s| tokenize(s).len()).sum::<usize>() as f64 / all.len() as f64;
        if !multi && distinct.len() <= 12 && distinct.len() * 2 <= present.len() && avg_tokens <= 4.0 {
            spec.value_type = ValueType::Categorical;
            spec.vocabulary = Some(distinct.iter().map(|s| s.to_string()).collect());
            spec.tier = Tier::Fast;
            return spec;
        }
        spec.tier = if avg_tokens <= 8.0 { Tier::Sem } else { Tier::Detail };
        return spec;
    }
    spec.tier = if multi { Tier::Detail } else { Tier::Fast };
    spec
}

/// Capitalized n-grams outside keyed `Label: value` spans, collected into
/// one dictionary field.
fn mine_entities(docs: &[Document], labels: &[String], params: &MiningParams) -> Option<MinedField> {
    let keyed: Vec<Regex> = labels
        .iter()
        .filter_map(|l| ExtractorConfig::keyed(l).pattern)
        .filter_map(|p| regex::RegexBuilder::new(&p).case_insensitive(true).build().ok())
        .collect();
    let label_keys: BTreeSet<String> = labels.iter().map(|l| l.to_lowercase()).collect();
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    let mut with_any = 0;
    for d in docs {
        let mut masked: Vec<(usize, usize)> = Vec::new();
        for re in &keyed {
            masked.extend(re.find_iter(&d.text).map(|m| (m.start(), m.end())));
        }
        masked.extend(scan_dates(&d.text, params.day_first).into_iter().map(|m| (m.start, m.end)));
        let mut seen = BTreeSet::new();
        for m in entity_re().find_iter(&d.text) {
            if masked.iter().any(|&(s, e)| m.start() < e && s < m.end()) {
                continue;
            }
            let phrase = m.as_str().split_whitespace().collect::<Vec<_>>().join(" ");
            let single = !phrase.contains(' ');
            let before = d.text[..m.start()].trim_end_matches([' ', '\t']);
            let sentence_start = before.is_empty() || before.ends_with(['.', '!', '?', ':', ';', '\n', '"']);
            if single && sentence_start {
                continue;
            }
            if label_keys.contains(&phrase.to_lowercase()) {
                continue;
            }
            seen.insert(phrase);
        }
        if !seen.is_empty() {
            with_any += 1;
        }
        for p in seen {
            *df.entry(p).or_default() += 1;
        }
    }
    let min_df = ((params.entity_min_df * docs.len() as f64).ceil() as usize).max(2);
    let mut terms: Vec<(String, usize)> = df.into_iter().filter(|(_, c)| *c >= min_df).collect();
    terms.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    terms.truncate(params.max_entities);
    if terms.is_empty() {
        return None;
    }
    let mut vocab: Vec<String> = terms.into_iter().map(|(t, _)| t).collect();
    vocab.sort();
    let spec = FieldSpec::new("named_entities", ValueType::StringSet, Tier::Sem)
        .with_description("names of people, organisations and places")
        .with_hint(ExtractorConfig::dictionary(vocab));
    Some(MinedField { spec, support: with_any as f64 / docs.len() as f64, origin: Origin::Entity })
}

fn name_similar(a: &str, b: &str) -> bool {
    a == b || embed(&a.replace('_', " ")).cosine(&embed(&b.replace('_', " "))) >= 0.9
}

/// Merge per-cluster pools: fields with equal or near-equal names collapse
/// into one, keeping the field spec of the best-supported occurrence and the union
/// of dictionary vocabularies.
pub fn merge_pools(pools: &[Vec<MinedField>]) -> Vec<MinedField> {
    let mut all: Vec<&MinedField> = pools.iter().flatten().collect();
    all.sort_by(|a, b| b.support.total_cmp(&a.support).then(a.spec.name.cmp(&b.spec.name)));
    let mut merged: Vec<MinedField> = Vec::new();
    for m in all {
        if let Some(existing) = merged.iter_mut().find(|e| name_similar(&e.spec.name, &m.spec.name)) {
            if let (Some(h), Some(other)) = (existing.spec.hint.as_mut(), m.spec.hint.as_ref()) {
                if h.kind == ExtractorKind::Dictionary && other.kind == ExtractorKind::Dictionary {
                    let mut v: BTreeSet<String> = h.vocabulary.take().unwrap_or_default().into_iter().collect();
                    v.extend(other.vocabulary.iter().flatten().cloned());
                    h.vocabulary = Some(v.into_iter().collect());
                }
            }
            continue;
        }
        merged.push(m.clone());
    }
    merged.sort_by(|a, b| a.spec.name.cmp(&b.spec.name));
    merged
}

/// Re-derive type, tier and support of merged fields on a common sample.
pub fn profile_pool(pool: &[MinedField], docs: &[Document], day_first: bool) -> Vec<MinedField> {
    pool.iter()
        .map(|m| {
            let mut spec = match m.origin {
                Origin::Keyed => {
                    let hint = m.spec.hint.clone().expect("keyed fields carry hints");
                    infer(&m.spec.name, &m.spec.description, hint, docs, day_first)
                }
                Origin::Typed => {
                    let mut s = m.spec.clone();
                    s.tier = typed_tier(&s, docs, day_first);
                    s
                }
                Origin::Entity => m.spec.clone(),
            };
            if spec.value_type == ValueType::Categorical && spec.tier != Tier::Fast {
                spec.vocabulary = None;
            }
            let vals = base_values(&spec, docs, day_first);
            let support = if docs.is_empty() {
                0.0
            } else {
                vals.iter().filter(|v| !v.is_empty()).count() as f64 / docs.len() as f64
            };
            MinedField { spec, support, origin: m.origin }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub schema: Schema,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<super::QualityReport>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn get(&self, granularity: Granularity) -> Option<&Schema> {
        self.candidates.iter().map(|c| &c.schema).find(|s| s.granularity == granularity)
    }
}

pub const LITE_MAX: usize = 6;
pub const STD_MAX: usize = 14;

/// Lite, std and full candidate schemas from the merged pools. Lite takes
/// the best-supported fast and sem fields, std tops lite up with any tier,
/// full keeps everything; the three are nested by construction.
pub fn build_candidate_schemas(pools: &[Vec<MinedField>]) -> Result<CandidateSet, SchemabootError> {
    let merged = merge_pools(pools);
    if merged.is_empty() {
        return Err(SchemabootError::EmptyPool);
    }
    let mut ranked: Vec<&MinedField> = merged.iter().collect();
    ranked.sort_by(|a, b| b.support.total_cmp(&a.support).then(a.spec.name.cmp(&b.spec.name)));
    let lite: Vec<&MinedField> =
        ranked.iter().copied().filter(|m| m.spec.tier != Tier::Detail).take(LITE_MAX).collect();
    let mut std = lite.clone();
    for m in &ranked {
        if std.len() >= STD_MAX {
            break;
        }
        if !std.iter().any(|s| s.spec.name == m.spec.name) {
            std.push(m);
        }
    }
    let mk = |id: &str, g: Granularity, fields: &[&MinedField]| Candidate {
        schema: Schema::tiered(id, g, fields.iter().map(|m| m.spec.clone()).collect()),
        report: None,
    };
    Ok(CandidateSet {
        candidates: vec![
            mk("lite", Granularity::Lite, &lite),
            mk("std", Granularity::Std, &std),
            mk("full", Granularity::Full, &ranked),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(texts: &[String]) -> Vec<Document> {
        texts.iter().enumerate().map(|(i, t)| Document::new(format!("d{i}"), t.as_str())).collect()
    }

    #[test]
    fn keyed_court_field() {
        let courts = ["High Court", "District Court", "Supreme Court"];
        let texts: Vec<String> = (0..10)
            .map(|i| format!("Court: {}. The matter was heard at length.", courts[i % 3]))
            .collect();
        let pool = mine_pool(&docs(&texts), 100, &MiningParams::default());
        let names: Vec<&str> = pool.iter().map(|m| m.spec.name.as_str()).collect();
        assert_eq!(names, ["court"]);
        let court = &pool[0].spec;
        assert_eq!(court.value_type, ValueType::Categorical);
        assert_eq!(court.tier, Tier::Fast);
        assert_eq!(court.hint.as_ref().unwrap().kind, ExtractorKind::KeyedPattern);
        assert_eq!(court.vocabulary.as_deref().unwrap(), ["district court", "high court", "supreme court"]);
        assert_eq!(pool[0].support, 1.0);
    }

    #[test]
    fn typed_inference() {
        let texts: Vec<String> = (0..8)
            .map(|i| format!("Publish Date: 2019-0{}-01\nAmount: ${},000\nSummary: a text about item {i} here", i + 1, i + 2))
            .collect();
        let pool = mine_pool(&docs(&texts), 100, &MiningParams::default());
        let by: BTreeMap<&str, &FieldSpec> = pool.iter().map(|m| (m.spec.name.as_str(), &m.spec)).collect();
        assert_eq!(by["publish_date"].value_type, ValueType::Date);
        assert_eq!(by["amount"].value_type, ValueType::Number);
        assert_eq!(by["amount"].tier, Tier::Fast);
        assert_eq!(by["summary"].tier, Tier::Sem);
        // keyed date and amount fields make the typed families redundant
        assert!(!by.contains_key("dates") && !by.contains_key("amounts"));
    }

    #[test]
    fn random_text_yields_typed_only() {
        let texts: Vec<String> = (0..6).map(|i| format!("zq{i} wrp flm on 3 March 2004 for $5")).collect();
        let pool = mine_pool(&docs(&texts), 100, &MiningParams::default());
        let names: Vec<&str> = pool.iter().map(|m| m.spec.name.as_str()).collect();
        assert_eq!(names, ["amounts", "dates"]);
        let none: Vec<String> = (0..6).map(|i| format!("zq{i} wrp flm")).collect();
        assert!(mine_pool(&docs(&none), 100, &MiningParams::default()).is_empty());
    }

    #[test]
    fn support_threshold() {
        let texts: Vec<String> = (0..10).map(|i| if i % 2 == 0 { "Court: high court".into() } else { "nothing".into() }).collect();
        let strict = MiningParams { min_support: 1.0, ..MiningParams::default() };
        assert!(mine_pool(&docs(&texts), 100, &strict).is_empty());
        assert_eq!(mine_pool(&docs(&texts), 100, &MiningParams::default()).len(), 1);
    }

    #[test]
    fn entities_skip_keyed_spans() {
        let texts: Vec<String> = (0..6)
            .map(|i| format!("Court: High Court. Counsel for Acme Holdings argued before Justice Mary Smith on day {i}."))
            .collect();
        let pool = mine_pool(&docs(&texts), 100, &MiningParams::default());
        let ents = pool.iter().find(|m| m.origin == Origin::Entity).unwrap();
        let vocab = ents.spec.hint.as_ref().unwrap().vocabulary.clone().unwrap();
        assert_eq!(vocab, ["Acme Holdings", "Justice Mary Smith"]);
    }

    fn field(name: &str, tier: Tier, support: f64) -> MinedField {
        let vt = if tier == Tier::Fast { ValueType::Categorical } else { ValueType::String };
        MinedField { spec: FieldSpec::new(name, vt, tier), support, origin: Origin::Keyed }
    }

    #[test]
    fn candidates_nest() {
        let tiers = [Tier::Fast, Tier::Sem, Tier::Detail];
        let pool: Vec<MinedField> =
            (0..10).map(|i| field(&format!("f{i}"), tiers[i % 3], 1.0 - i as f64 / 20.0)).collect();
        let set = build_candidate_schemas(&[pool]).unwrap();
        let names = |g| set.get(g).unwrap().field_names().into_iter().map(String::from).collect::<BTreeSet<_>>();
        let (l, s, f) = (names(Granularity::Lite), names(Granularity::Std), names(Granularity::Full));
        assert!(l.len() <= LITE_MAX && l.is_subset(&s) && s.is_subset(&f));
        assert_eq!(f.len(), 10);

        let two = vec![field("a", Tier::Fast, 1.0), field("b", Tier::Sem, 0.5)];
        let set = build_candidate_schemas(&[two]).unwrap();
        assert_eq!(set.get(Granularity::Lite).unwrap().fields, set.get(Granularity::Full).unwrap().fields);
        assert_eq!(set.get(Granularity::Std).unwrap().fields, set.get(Granularity::Full).unwrap().fields);
        assert!(matches!(build_candidate_schemas(&[vec![], vec![]]), Err(SchemabootError::EmptyPool)));
    }

    #[test]
    fn merge_by_name() {
        let a = vec![field("name", Tier::Sem, 0.9), field("court", Tier::Fast, 0.8)];
        let b = vec![field("name", Tier::Sem, 0.7), field("topic", Tier::Sem, 0.6)];
        let merged = merge_pools(&[a, b]);
        let names: Vec<&str> = merged.iter().map(|m| m.spec.name.as_str()).collect();
        assert_eq!(names, ["court", "name", "topic"]);
        assert_eq!(merged[1].support, 0.9);
    }
}
