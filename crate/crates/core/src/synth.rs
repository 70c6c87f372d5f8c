//! Planted synthetic corpora with known field values and gold queries.
//!
//! Every document carries `Label: value` header lines followed by a short
//! lowercase body. Expected query results are computed directly from the
//! planted records, never through the engine.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::annotator::ExtractorConfig;
use crate::corpus::{Corpus, Document};
use crate::eval::{GoldAttribute, GoldQuery, GroundTruth};
use crate::schema::{FieldSpec, Granularity, Schema, Tier, ValueType};

pub const DOC_TYPES: [&str; 4] = ["Judgment", "Order", "Appeal", "Ruling"];
pub const COURTS: [&str; 5] = ["High Court", "Supreme Court", "District Court", "Court of Appeal", "Tax Tribunal"];
pub const TOPICS: [&str; 6] =
    ["tax law", "contract dispute", "employment", "intellectual property", "family law", "land use"];

/// Planted values of one document.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedDoc {
    pub doc_id: String,
    pub doc_type: &'static str,
    pub publish_date: String,
    pub court: &'static str,
    pub topic: &'static str,
    pub amount: u64,
    /// Sentence length in years, stated in the body when present.
    pub years: Option<u64>,
    /// Whether the body mentions an approved merger.
    pub merger: bool,
}

#[derive(Debug, Clone)]
pub struct Planted {
    pub records: Vec<PlantedDoc>,
    pub corpus: Corpus,
    pub gold: GroundTruth,
}

const BODY: [&str; 20] = [
    "the parties disagreed about {topic} and the obligations that followed from it.",
    "counsel for the applicant argued that the earlier decision on {topic} was wrong.",
    "the record shows a long history of correspondence between the parties.",
    "the respondent asked for more time to file written submissions.",
    "several witnesses gave evidence about the events in question.",
    "the tribunal below had considered the matter of {topic} at length.",
    "costs were reserved pending further argument.",
    "no party sought an adjournment of the hearing.",
    "the applicant relied on a line of earlier authority that was said to be binding.",
    "the respondent accepted some of the facts but disputed the inferences drawn from them.",
    "written material ran to several hundred pages and was summarised by both sides.",
    "the central question was whether the statutory test had been applied correctly.",
    "expert evidence was heard over two days and tested in cross examination.",
    "the first instance reasoning on {topic} was examined closely.",
    "both parties agreed that the relevant contract terms were not ambiguous.",
    "the court noted that delay alone was not a sufficient ground for relief.",
    "a preliminary objection to jurisdiction was raised and later withdrawn.",
    "submissions on remedy were to be filed within a short period.",
    "the reasons given below were described as brief but adequate.",
    "the judgment records that the hearing took place in open session.",
];

fn doc_text(d: &PlantedDoc, rng: &mut ChaCha8Rng) -> String {
    let mut s = format!(
        "Doc type: {}\nPublish date: {}\nCourt: {}\nTopic: {}\nAmount: ${}\n\n",
        d.doc_type,
        d.publish_date,
        d.court,
        d.topic,
        thousands(d.amount)
    );
    let mut body: Vec<String> = BODY
        .choose_multiple(rng, 12)
        .map(|t| capitalize(&t.replace("{topic}", d.topic)))
        .collect();
    if let Some(y) = d.years {
        body.insert(1, format!("The defendant was sentenced to {y} years in prison."));
    }
    if d.merger {
        body.push("The merger was finally approved by the board.".into());
    }
    s.push_str(&body.join(" "));
    s.push('\n');
    s
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn random_doc(i: usize, rng: &mut ChaCha8Rng) -> PlantedDoc {
    let year = rng.gen_range(1995..=2020);
    let month = rng.gen_range(1..=12);
    let day = rng.gen_range(1..=28);
    PlantedDoc {
        doc_id: format!("doc{i:04}"),
        doc_type: DOC_TYPES[rng.gen_range(0..DOC_TYPES.len())],
        publish_date: format!("{year:04}-{month:02}-{day:02}"),
        court: COURTS[rng.gen_range(0..COURTS.len())],
        topic: TOPICS[rng.gen_range(0..TOPICS.len())],
        amount: rng.gen_range(10..=2000) * 100,
        years: rng.gen_bool(0.3).then(|| rng.gen_range(1..=15)),
        merger: rng.gen_bool(0.2),
    }
}

/// The five planted attributes as a curator would describe them.
pub fn gold_schema() -> Vec<GoldAttribute> {
    [
        ("doc_type", "doc type"),
        ("publish_date", "publish date"),
        ("court", "court"),
        ("topic", "topic"),
        ("amount", "amount"),
    ]
    .iter()
    .map(|(n, d)| GoldAttribute { name: n.to_string(), description: d.to_string() })
    .collect()
}

fn eq(a: &str, b: &str) -> bool {
    a.eq_ignore_ascii_case(b)
}

type Filter = fn(&PlantedDoc) -> bool;

/// Gold queries with expected rows computed from `records`.
pub fn gold_queries(records: &[PlantedDoc]) -> Vec<GoldQuery> {
    let ids = |f: Filter| -> Vec<Vec<Value>> {
        records.iter().filter(|d| f(d)).map(|d| vec![json!(d.doc_id)]).collect()
    };
    let rows = |f: Filter, p: fn(&PlantedDoc) -> Vec<Value>| -> Vec<Vec<Value>> {
        records.iter().filter(|d| f(d)).map(p).collect()
    };
    let q = |id: &str, query: &str, cols: &[&str], rows: Vec<Vec<Value>>| GoldQuery {
        id: id.into(),
        query: query.into(),
        columns: cols.iter().map(|c| c.to_string()).collect(),
        rows: Some(rows),
    };
    let mut out = vec![
        q("q01_court", "SELECT doc_id FROM store WHERE court = 'High Court'", &["doc_id"], ids(|d| d.court == "High Court")),
        q(
            "q02_appeals",
            "SELECT doc_id, amount FROM store WHERE doc_type = 'appeal'",
            &["doc_id", "amount"],
            rows(|d| eq(d.doc_type, "appeal"), |d| vec![json!(d.doc_id), json!(d.amount)]),
        ),
        q(
            "q03_tax",
            "SELECT doc_id, publish_date FROM store WHERE topic = 'tax law'",
            &["doc_id", "publish_date"],
            rows(|d| d.topic == "tax law", |d| vec![json!(d.doc_id), json!(d.publish_date)]),
        ),
        q("q04_large", "SELECT doc_id FROM store WHERE amount > 150000", &["doc_id"], ids(|d| d.amount > 150_000)),
        q(
            "q05_early",
            "SELECT doc_id, court FROM store WHERE publish_date < '2000-01-01'",
            &["doc_id", "court"],
            rows(|d| d.publish_date.as_str() < "2000-01-01", |d| vec![json!(d.doc_id), json!(d.court)]),
        ),
        q(
            "q06_rulings",
            "SELECT doc_id, topic FROM store WHERE doc_type = 'ruling'",
            &["doc_id", "topic"],
            rows(|d| eq(d.doc_type, "ruling"), |d| vec![json!(d.doc_id), json!(d.topic)]),
        ),
        q(
            "q08_either_topic",
            "SELECT doc_id FROM store WHERE topic = 'family law' OR topic = 'employment'",
            &["doc_id"],
            ids(|d| d.topic == "family law" || d.topic == "employment"),
        ),
        q(
            "q09_supreme_judgments",
            "SELECT doc_id FROM store WHERE court = 'Supreme Court' AND doc_type = 'judgment'",
            &["doc_id"],
            ids(|d| d.court == "Supreme Court" && eq(d.doc_type, "judgment")),
        ),
        q(
            "q10_contract_band",
            "SELECT doc_id, amount FROM store WHERE topic = 'contract dispute' AND amount >= 50000 AND amount <= 100000",
            &["doc_id", "amount"],
            rows(
                |d| d.topic == "contract dispute" && (50_000..=100_000).contains(&d.amount),
                |d| vec![json!(d.doc_id), json!(d.amount)],
            ),
        ),
        q(
            "q11_recent_appeal_court",
            "SELECT doc_id FROM store WHERE publish_date >= '2010-01-01' AND court = 'Court of Appeal'",
            &["doc_id"],
            ids(|d| d.publish_date.as_str() >= "2010-01-01" && d.court == "Court of Appeal"),
        ),
        q(
            "q12_old_ip_orders",
            "SELECT doc_id FROM store WHERE doc_type = 'order' AND publish_date < '2005-06-30' AND topic = 'intellectual property'",
            &["doc_id"],
            ids(|d| eq(d.doc_type, "order") && d.publish_date.as_str() < "2005-06-30" && d.topic == "intellectual property"),
        ),
        q(
            "q13_long_sentences",
            r"SELECT doc_id, years FROM store WHERE court = 'District Court' AND EXTRACT(years, 'regex:(\d+) years') AND years >= 5",
            &["doc_id", "years"],
            rows(
                |d| d.court == "District Court" && d.years.is_some_and(|y| y >= 5),
                |d| vec![json!(d.doc_id), json!(d.years)],
            ),
        ),
        q(
            "q14_merger_appeals",
            "SELECT doc_id FROM store WHERE doc_type = 'appeal' AND EXTRACT(m, 'contains:merger')",
            &["doc_id"],
            ids(|d| eq(d.doc_type, "appeal") && d.merger),
        ),
        q(
            "q15_small_tax",
            "SELECT doc_id, amount, court FROM store WHERE topic = 'tax law' AND amount < 20000",
            &["doc_id", "amount", "court"],
            rows(|d| d.topic == "tax law" && d.amount < 20_000, |d| vec![json!(d.doc_id), json!(d.amount), json!(d.court)]),
        ),
        q(
            "q16_recent_rulings",
            "SELECT doc_id FROM store WHERE court IN ('Tax Tribunal', 'High Court') AND doc_type = 'ruling' AND publish_date > '2015-12-31'",
            &["doc_id"],
            ids(|d| {
                matches!(d.court, "Tax Tribunal" | "High Court")
                    && eq(d.doc_type, "ruling")
                    && d.publish_date.as_str() > "2015-12-31"
            }),
        ),
        q(
            "q18_top_high_court",
            "SELECT doc_id, amount FROM store WHERE court = 'High Court' ORDER BY amount DESC, doc_id LIMIT 5",
            &["doc_id", "amount"],
            {
                let mut v: Vec<&PlantedDoc> = records.iter().filter(|d| d.court == "High Court").collect();
                v.sort_by(|a, b| b.amount.cmp(&a.amount).then(a.doc_id.cmp(&b.doc_id)));
                v.iter().take(5).map(|d| vec![json!(d.doc_id), json!(d.amount)]).collect()
            },
        ),
        q(
            "q19_join_topic",
            "SELECT a.doc_id, b.doc_id FROM store a JOIN store b ON a.topic = b.topic \
             WHERE a.court = 'Supreme Court' AND a.doc_type = 'appeal' AND b.court = 'Tax Tribunal' AND b.doc_type = 'order'",
            &["a.doc_id", "b.doc_id"],
            {
                let left: Vec<&PlantedDoc> =
                    records.iter().filter(|d| d.court == "Supreme Court" && eq(d.doc_type, "appeal")).collect();
                let right: Vec<&PlantedDoc> =
                    records.iter().filter(|d| d.court == "Tax Tribunal" && eq(d.doc_type, "order")).collect();
                let mut v = Vec::new();
                for a in &left {
                    for b in right.iter().filter(|b| b.topic == a.topic) {
                        v.push(vec![json!(a.doc_id), json!(b.doc_id)]);
                    }
                }
                v
            },
        ),
    ];

    let mut by_type: BTreeMap<&str, u64> = BTreeMap::new();
    for d in records {
        *by_type.entry(d.doc_type).or_default() += 1;
    }
    out.insert(
        6,
        q(
            "q07_type_counts",
            "SELECT doc_type, COUNT(*) AS n FROM store GROUP BY doc_type",
            &["doc_type", "n"],
            by_type.iter().map(|(t, n)| vec![json!(t), json!(n)]).collect(),
        ),
    );
    let mut sums: BTreeMap<&str, u64> = BTreeMap::new();
    for d in records.iter().filter(|d| eq(d.doc_type, "judgment")) {
        *sums.entry(d.court).or_default() += d.amount;
    }
    out.insert(
        16,
        q(
            "q17_judgment_totals",
            "SELECT court, SUM(amount) AS total FROM store WHERE doc_type = 'judgment' GROUP BY court",
            &["court", "total"],
            sums.iter().map(|(c, s)| vec![json!(c), json!(s)]).collect(),
        ),
    );
    let mut big: BTreeMap<&str, u64> = BTreeMap::new();
    for d in records.iter().filter(|d| d.amount > 100_000) {
        *big.entry(d.court).or_default() += 1;
    }
    out.push(q(
        "q20_script_big_cases",
        "CREATE TEMP TABLE big AS SELECT doc_id, court FROM store WHERE amount > 100000;\n\
         SELECT court, COUNT(*) AS cases FROM big GROUP BY court",
        &["court", "cases"],
        big.iter().map(|(c, n)| vec![json!(c), json!(n)]).collect(),
    ));
    out
}

/// `n` planted legal documents with gold queries, fields and schema.
pub fn planted_corpus(seed: u64, n: usize) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records: Vec<PlantedDoc> = (0..n).map(|i| random_doc(i, &mut rng)).collect();
    let docs: Vec<Document> = records.iter().map(|d| Document::new(d.doc_id.clone(), doc_text(d, &mut rng))).collect();
    let corpus = Corpus::from_documents(docs).expect("planted ids are unique");
    let fields = records
        .iter()
        .map(|d| {
            let mut m = BTreeMap::new();
            m.insert("doc_type".to_string(), vec![d.doc_type.to_string()]);
            m.insert("publish_date".to_string(), vec![d.publish_date.clone()]);
            m.insert("court".to_string(), vec![d.court.to_string()]);
            m.insert("topic".to_string(), vec![d.topic.to_string()]);
            m.insert("amount".to_string(), vec![d.amount.to_string()]);
            (d.doc_id.clone(), m)
        })
        .collect();
    let gold = GroundTruth { queries: gold_queries(&records), fields, schema: gold_schema() };
    Planted { records, corpus, gold }
}

/// Region values of the latency corpus; the first is planted on exactly
/// `selected` documents.
pub const REGIONS: [&str; 4] = ["north", "south", "east", "west"];

/// A corpus of `n` documents where `Region: north` appears on exactly
/// `selected` of them, with a fixed one-field schema indexing it.
pub fn latency_corpus(seed: u64, n: usize, selected: usize) -> (Corpus, Schema) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut north: Vec<bool> = (0..n).map(|i| i < selected).collect();
    north.shuffle(&mut rng);
    let docs = north
        .iter()
        .enumerate()
        .map(|(i, &is_north)| {
            let region = if is_north { REGIONS[0] } else { REGIONS[rng.gen_range(1..REGIONS.len())] };
            let years = rng.gen_range(1..=20);
            let text = format!(
                "Region: {region}\n\nThe shipment was delayed by {years} years of paperwork. \
                 The merger was finally approved after review.\n"
            );
            Document::new(format!("r{i:04}"), text)
        })
        .collect();
    let corpus = Corpus::from_documents(docs).expect("unique ids");
    let mut field = FieldSpec::new("region", ValueType::Categorical, Tier::Fast)
        .with_description("region")
        .with_hint(ExtractorConfig::keyed("Region"));
    field.vocabulary = Some(REGIONS.iter().map(|s| s.to_string()).collect());
    (corpus, Schema::tiered("latency", Granularity::Lite, vec![field]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_is_deterministic() {
        let a = planted_corpus(7, 50);
        let b = planted_corpus(7, 50);
        assert_eq!(a.corpus.to_jsonl(), b.corpus.to_jsonl());
        assert_eq!(a.gold, b.gold);
        assert_eq!(a.gold.queries.len(), 20);
        assert_ne!(a.corpus.to_jsonl(), planted_corpus(8, 50).corpus.to_jsonl());
    }

    #[test]
    fn gold_rows_have_declared_arity() {
        let p = planted_corpus(1, 200);
        for q in &p.gold.queries {
            let e = q.expected().unwrap().unwrap();
            assert!(!e.rows.is_empty(), "{} has no expected rows", q.id);
        }
    }

    #[test]
    fn latency_corpus_plants_exact_selection() {
        let (c, s) = latency_corpus(3, 1000, 50);
        assert_eq!(c.len(), 1000);
        assert_eq!(c.docs().iter().filter(|d| d.text.starts_with("Region: north")).count(), 50);
        assert_eq!(s.fields.len(), 1);
    }

    #[test]
    fn thousands_separators() {
        assert_eq!(thousands(1000), "1,000");
        assert_eq!(thousands(200000), "200,000");
        assert_eq!(thousands(999), "999");
    }
}
