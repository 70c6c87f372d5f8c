//! The hybrid annotation store: a typed fast table with hash and sorted
//! indexes, and a document store for sem/detail values with an inverted
//! token index over sem fields. Rows are ordered by doc_id, so sorted row
//! sets are sorted doc_id sets.

mod persist;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotator::AnnotationBatch;
use crate::corpus::{tokenize, Corpus, RawSpan};
use crate::schema::{FieldSpec, Schema, Tier, ValueType};
use crate::value::{any_matches, literal_key, normalize_text, stored_key, union, CompareOp, DocSet, Key, Literal};

pub use persist::{OpenOptions, StoreFootprint, FORMAT_VERSION};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("batch schema {batch:?} does not match schema {schema:?}")]
    SchemaMismatch { batch: String, schema: String },
    #[error("fast field {field:?} has several values for {doc_id:?}")]
    MultiValueFastField { field: String, doc_id: String },
    #[error("document {0:?} is not in the corpus")]
    MissingDocument(String),
    #[error("annotation batch is empty")]
    EmptyBatch,
    #[error("duplicate record for {0:?}")]
    DuplicateRecord(String),
    #[error("record for {doc_id:?} has unknown field {field:?}")]
    UnknownRecordField { doc_id: String, field: String },
    #[error("unknown fast column {0:?}")]
    UnknownColumn(String),
    #[error("unknown sem field {0:?}")]
    UnknownField(String),
    #[error("type error on {field:?}: {detail}")]
    TypeError { field: String, detail: String },
    #[error("corrupt store: {file} at byte {offset}: {detail}")]
    CorruptStore { file: String, offset: u64, detail: String },
    #[error("io error: {0}")]
    Io(String),
    #[error("raw text unavailable for {0:?}")]
    RawTextUnavailable(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_id: String,
    pub corpus_sha256: String,
    pub built_at: String,
    pub doc_count: usize,
}

/// Predicate accepted by the fast-table indexes.
#[derive(Debug, Clone, PartialEq)]
pub enum FastPredicate {
    Compare(CompareOp, Literal),
    In(Vec<Literal>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SemMatch {
    /// Normalized full-string equality with some stored value.
    Equals(String),
    ContainsToken(String),
    /// Consecutive tokens inside one stored value.
    Phrase(Vec<String>),
}

impl SemMatch {
    /// `contains` semantics for a literal: one token → token lookup,
    /// several → phrase.
    pub fn contains(literal: &str) -> SemMatch {
        let mut toks = tokenize(literal);
        if toks.len() == 1 {
            SemMatch::ContainsToken(toks.remove(0))
        } else {
            SemMatch::Phrase(toks)
        }
    }
}

#[derive(Debug, Clone)]
enum ColumnIndex {
    Hash(BTreeMap<String, DocSet>),
    Sorted(Vec<(Key, u32)>),
}

#[derive(Debug, Clone)]
pub struct FastTable {
    columns: Vec<FieldSpec>,
    /// Column-major cells.
    cells: Vec<Vec<Option<String>>>,
    indexes: Vec<ColumnIndex>,
}

impl FastTable {
    pub fn columns(&self) -> &[FieldSpec] {
        &self.columns
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

#[derive(Debug, Clone)]
pub struct DocStore {
    fields: Vec<FieldSpec>,
    values: Vec<BTreeMap<String, Vec<String>>>,
    postings: BTreeMap<String, BTreeMap<String, DocSet>>,
    exact: BTreeMap<String, BTreeMap<String, DocSet>>,
}

impl DocStore {
    pub fn fields(&self) -> &[FieldSpec] {
        &self.fields
    }

    /// `(field, token)` → posting list.
    pub fn postings(&self) -> impl Iterator<Item = (&str, &str, &DocSet)> {
        self.postings
            .iter()
            .flat_map(|(f, m)| m.iter().map(move |(t, d)| (f.as_str(), t.as_str(), d)))
    }
}

#[derive(Debug, Clone)]
pub struct AnnotationStore {
    schema: Schema,
    manifest: Manifest,
    doc_ids: Vec<String>,
    raw_spans: Vec<Option<RawSpan>>,
    raw_text: Option<Arc<Vec<Option<String>>>>,
    fast: FastTable,
    docs: DocStore,
    pub warnings: Vec<String>,
}

/// Rows as handed to the builder; shared by `build_store` and `open`.
struct RowData {
    doc_id: String,
    raw: Option<RawSpan>,
    values: BTreeMap<String, Vec<String>>,
}

pub fn build_store(
    batch: &AnnotationBatch,
    schema: &Schema,
    corpus: &Corpus,
    built_at: &str,
) -> Result<AnnotationStore, StoreError> {
    if batch.schema_id != schema.schema_id {
        return Err(StoreError::SchemaMismatch { batch: batch.schema_id.clone(), schema: schema.schema_id.clone() });
    }
    if batch.records.is_empty() {
        return Err(StoreError::EmptyBatch);
    }
    let by_id: HashMap<&str, &crate::corpus::Document> =
        corpus.docs().iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let names = schema.field_names();
    let mut rows = Vec::with_capacity(batch.records.len());
    let mut texts = Vec::with_capacity(batch.records.len());
    let mut seen = BTreeSet::new();
    for rec in &batch.records {
        let doc = by_id.get(rec.doc_id.as_str()).ok_or_else(|| StoreError::MissingDocument(rec.doc_id.clone()))?;
        if !seen.insert(rec.doc_id.as_str()) {
            return Err(StoreError::DuplicateRecord(rec.doc_id.clone()));
        }
        if let Some(bad) = rec.values.keys().find(|k| !names.contains(k.as_str())) {
            return Err(StoreError::UnknownRecordField { doc_id: rec.doc_id.clone(), field: bad.clone() });
        }
        rows.push(RowData { doc_id: rec.doc_id.clone(), raw: doc.raw, values: rec.values.clone() });
        texts.push((rec.doc_id.clone(), doc.text.clone()));
    }
    let manifest = Manifest {
        schema_id: schema.schema_id.clone(),
        corpus_sha256: corpus.fingerprint().to_string(),
        built_at: built_at.to_string(),
        doc_count: rows.len(),
    };
    let mut store = AnnotationStore::from_rows(schema.canonical(), manifest, rows)?;
    texts.sort();
    store.raw_text = Some(Arc::new(texts.into_iter().map(|(_, t)| Some(t)).collect()));
    Ok(store)
}

impl AnnotationStore {
    fn from_rows(schema: Schema, manifest: Manifest, mut rows: Vec<RowData>) -> Result<Self, StoreError> {
        rows.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        let fast_cols: Vec<FieldSpec> = schema.fields_in(Tier::Fast).cloned().collect();
        let doc_fields: Vec<FieldSpec> = schema.fields.iter().filter(|f| f.tier != Tier::Fast).cloned().collect();

        let mut cells = vec![Vec::with_capacity(rows.len()); fast_cols.len()];
        for row in &rows {
            for (c, col) in fast_cols.iter().enumerate() {
                let vals = row.values.get(&col.name).map_or(&[][..], Vec::as_slice);
                if vals.len() > 1 {
                    return Err(StoreError::MultiValueFastField { field: col.name.clone(), doc_id: row.doc_id.clone() });
                }
                cells[c].push(vals.first().cloned());
            }
        }
        let indexes = fast_cols
            .iter()
            .zip(&cells)
            .map(|(col, column)| match col.value_type {
                ValueType::Number | ValueType::Date => {
                    let mut v: Vec<(Key, u32)> = column
                        .iter()
                        .enumerate()
                        .filter_map(|(r, c)| c.as_deref().and_then(|s| stored_key(col.value_type, s)).map(|k| (k, r as u32)))
                        .collect();
                    v.sort();
                    ColumnIndex::Sorted(v)
                }
                _ => {
                    let mut m: BTreeMap<String, DocSet> = BTreeMap::new();
                    for (r, c) in column.iter().enumerate() {
                        if let Some(s) = c {
                            m.entry(normalize_text(s)).or_default().push(r as u32);
                        }
                    }
                    ColumnIndex::Hash(m)
                }
            })
            .collect();

        let mut values = Vec::with_capacity(rows.len());
        let mut postings: BTreeMap<String, BTreeMap<String, DocSet>> = BTreeMap::new();
        let mut exact: BTreeMap<String, BTreeMap<String, DocSet>> = BTreeMap::new();
        for (r, row) in rows.iter().enumerate() {
            let mut m = BTreeMap::new();
            for f in &doc_fields {
                let vals = row.values.get(&f.name).cloned().unwrap_or_default();
                if f.tier == Tier::Sem {
                    for v in &vals {
                        for tok in tokenize(v) {
                            let list = postings.entry(f.name.clone()).or_default().entry(tok).or_default();
                            if list.last() != Some(&(r as u32)) {
                                list.push(r as u32);
                            }
                        }
                        let list = exact.entry(f.name.clone()).or_default().entry(normalize_text(v)).or_default();
                        if list.last() != Some(&(r as u32)) {
                            list.push(r as u32);
                        }
                    }
                }
                if !vals.is_empty() {
                    m.insert(f.name.clone(), vals);
                }
            }
            values.push(m);
        }

        Ok(AnnotationStore {
            manifest,
            doc_ids: rows.iter().map(|r| r.doc_id.clone()).collect(),
            raw_spans: rows.iter().map(|r| r.raw).collect(),
            raw_text: None,
            fast: FastTable { columns: fast_cols, cells, indexes },
            docs: DocStore { fields: doc_fields, values, postings, exact },
            schema,
            warnings: Vec::new(),
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn fast(&self) -> &FastTable {
        &self.fast
    }

    pub fn doc_store(&self) -> &DocStore {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_id(&self, row: u32) -> &str {
        &self.doc_ids[row as usize]
    }

    pub fn row_of(&self, doc_id: &str) -> Option<u32> {
        self.doc_ids.binary_search_by(|d| d.as_str().cmp(doc_id)).ok().map(|r| r as u32)
    }

    pub fn all_rows(&self) -> DocSet {
        (0..self.doc_ids.len() as u32).collect()
    }

    pub fn ids_of(&self, rows: &[u32]) -> Vec<String> {
        rows.iter().map(|&r| self.doc_ids[r as usize].clone()).collect()
    }

    /// Stored values of any field for a row (fast fields have at most one).
    pub fn field_values(&self, row: u32, field: &str) -> &[String] {
        if let Some(c) = self.fast.column(field) {
            return self.fast.cells[c][row as usize].as_ref().map_or(&[], std::slice::from_ref);
        }
        self.docs.values[row as usize].get(field).map_or(&[], Vec::as_slice)
    }

    pub fn raw_text(&self, row: u32) -> Result<&str, StoreError> {
        self.raw_text
            .as_ref()
            .and_then(|t| t.get(row as usize))
            .and_then(|t| t.as_deref())
            .ok_or_else(|| StoreError::RawTextUnavailable(self.doc_ids[row as usize].clone()))
    }

    fn fast_key(&self, c: usize, lit: &Literal) -> Result<Key, StoreError> {
        let col = &self.fast.columns[c];
        literal_key(col.value_type, lit).map_err(|detail| StoreError::TypeError { field: col.name.clone(), detail })
    }

    /// Indexed lookup on a fast column.
    pub fn lookup_fast(&self, column: &str, pred: &FastPredicate) -> Result<DocSet, StoreError> {
        let c = self.fast.column(column).ok_or_else(|| StoreError::UnknownColumn(column.to_string()))?;
        match pred {
            FastPredicate::In(list) => {
                let mut out = DocSet::new();
                for lit in list {
                    out = union(&out, &self.lookup_fast(column, &FastPredicate::Compare(CompareOp::Eq, lit.clone()))?);
                }
                Ok(out)
            }
            FastPredicate::Compare(op, lit) => {
                let key = self.fast_key(c, lit)?;
                let mut out: DocSet = match &self.fast.indexes[c] {
                    ColumnIndex::Hash(map) => {
                        let Key::Text(k) = &key else { unreachable!("hash columns are textual") };
                        match op {
                            CompareOp::Eq => map.get(k).cloned().unwrap_or_default(),
                            _ => map
                                .iter()
                                .filter(|(v, _)| op.holds(v.as_str().cmp(k.as_str())))
                                .flat_map(|(_, rows)| rows.iter().copied())
                                .collect(),
                        }
                    }
                    ColumnIndex::Sorted(v) => {
                        let lo = v.partition_point(|(k, _)| *k < key);
                        let hi = v.partition_point(|(k, _)| *k <= key);
                        let range: Box<dyn Iterator<Item = &(Key, u32)>> = match op {
                            CompareOp::Eq => Box::new(v[lo..hi].iter()),
                            CompareOp::Ne => Box::new(v[..lo].iter().chain(&v[hi..])),
                            CompareOp::Lt => Box::new(v[..lo].iter()),
                            CompareOp::Le => Box::new(v[..hi].iter()),
                            CompareOp::Gt => Box::new(v[hi..].iter()),
                            CompareOp::Ge => Box::new(v[lo..].iter()),
                        };
                        range.map(|(_, r)| *r).collect()
                    }
                };
                out.sort_unstable();
                Ok(out)
            }
        }
    }

    /// Exact result size of a fast lookup, from the index statistics alone.
    pub fn count_fast(&self, column: &str, pred: &FastPredicate) -> Result<usize, StoreError> {
        let c = self.fast.column(column).ok_or_else(|| StoreError::UnknownColumn(column.to_string()))?;
        match (pred, &self.fast.indexes[c]) {
            (FastPredicate::Compare(op, lit), ColumnIndex::Sorted(v)) => {
                let key = self.fast_key(c, lit)?;
                let lo = v.partition_point(|(k, _)| *k < key);
                let hi = v.partition_point(|(k, _)| *k <= key);
                Ok(match op {
                    CompareOp::Eq => hi - lo,
                    CompareOp::Ne => v.len() - (hi - lo),
                    CompareOp::Lt => lo,
                    CompareOp::Le => hi,
                    CompareOp::Gt => v.len() - hi,
                    CompareOp::Ge => v.len() - lo,
                })
            }
            (FastPredicate::Compare(op, lit), ColumnIndex::Hash(map)) => {
                let Key::Text(k) = self.fast_key(c, lit)? else { unreachable!() };
                Ok(map
                    .iter()
                    .filter(|(v, _)| op.holds(v.as_str().cmp(k.as_str())))
                    .map(|(_, rows)| rows.len())
                    .sum())
            }
            (FastPredicate::In(_), _) => Ok(self.lookup_fast(column, pred)?.len()),
        }
    }

    fn sem_field(&self, field: &str) -> Result<&FieldSpec, StoreError> {
        self.docs
            .fields
            .iter()
            .find(|f| f.name == field && f.tier == Tier::Sem)
            .ok_or_else(|| StoreError::UnknownField(field.to_string()))
    }

    /// Indexed lookup on a sem field.
    pub fn lookup_sem(&self, field: &str, m: &SemMatch) -> Result<DocSet, StoreError> {
        self.sem_field(field)?;
        let postings = self.docs.postings.get(field);
        let lookup = |tok: &str| postings.and_then(|p| p.get(tok)).cloned().unwrap_or_default();
        Ok(match m {
            SemMatch::Equals(v) => self
                .docs
                .exact
                .get(field)
                .and_then(|e| e.get(&normalize_text(v)))
                .cloned()
                .unwrap_or_default(),
            SemMatch::ContainsToken(t) => lookup(&t.to_lowercase()),
            SemMatch::Phrase(toks) if toks.is_empty() => DocSet::new(),
            SemMatch::Phrase(toks) => {
                let mut cand = lookup(&toks[0]);
                for t in &toks[1..] {
                    cand = crate::value::intersect(&cand, &lookup(t));
                }
                cand.retain(|&r| {
                    self.field_values(r, field).iter().any(|v| {
                        let vt = tokenize(v);
                        vt.windows(toks.len()).any(|w| w == toks.as_slice())
                    })
                });
                cand
            }
        })
    }

    /// Exact result size of a sem lookup where the index gives it directly.
    pub fn count_sem(&self, field: &str, m: &SemMatch) -> Result<usize, StoreError> {
        self.sem_field(field)?;
        Ok(match m {
            SemMatch::Equals(v) => self.docs.exact.get(field).and_then(|e| e.get(&normalize_text(v))).map_or(0, Vec::len),
            SemMatch::ContainsToken(t) => {
                self.docs.postings.get(field).and_then(|p| p.get(&t.to_lowercase())).map_or(0, Vec::len)
            }
            SemMatch::Phrase(toks) => toks
                .iter()
                .map(|t| self.docs.postings.get(field).and_then(|p| p.get(t)).map_or(0, Vec::len))
                .min()
                .unwrap_or(0),
        })
    }

    /// Full-scan evaluation of a comparison on any field, by stored values.
    pub fn scan_compare(&self, field: &FieldSpec, op: CompareOp, key: &Key) -> DocSet {
        (0..self.len() as u32)
            .filter(|&r| any_matches(field.value_type, self.field_values(r, &field.name), op, key))
            .collect()
    }
}
