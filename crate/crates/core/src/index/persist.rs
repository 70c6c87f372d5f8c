//! On-disk layout of a store directory:
//!
//! * `manifest.json`  schema id, corpus fingerprint, build time, row count
//! * `schema.json`    canonical schema
//! * `fast.csv`       fast table, header cells `name:type`, empty cell = null
//! * `docs.jsonl`     one row per line: `id`, `raw` span `[offset, len]`, `v` sem/detail values
//! * `postings.jsonl` inverted index over sem fields
//!
//! Every file is a pure function of the in-memory store, so `open` rebuilds
//! the store from the data files and byte-compares its re-serialization
//! against what is on disk. Any difference is reported as corruption at the
//! first differing byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{AnnotationStore, Manifest, RowData, StoreError};
use crate::corpus::{parse_line, sha256_hex, RawSpan};
use crate::schema::{Schema, ValueType};

/// Version of the directory layout; bumped on incompatible changes.
pub const FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const SCHEMA: &str = "schema.json";
const FAST: &str = "fast.csv";
const DOCS: &str = "docs.jsonl";
const POSTINGS: &str = "postings.jsonl";

#[derive(Debug, Clone, Default)]
pub struct OpenOptions {
    /// Corpus file the store was built from; needed for raw text access.
    pub corpus: Option<PathBuf>,
    /// Fail instead of warn when the corpus fingerprint does not match.
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StoreFootprint {
    pub fast_bytes: usize,
    pub doc_bytes: usize,
    pub postings_bytes: usize,
}

impl StoreFootprint {
    pub fn total(&self) -> usize {
        self.fast_bytes + self.doc_bytes + self.postings_bytes
    }
}

#[derive(Serialize, Deserialize)]
struct DocLine {
    #[serde(rename = "id")]
    doc_id: String,
    /// `[offset, len]` of the document's corpus line.
    raw: Option<[u64; 2]>,
    #[serde(rename = "v", default, skip_serializing_if = "BTreeMap::is_empty")]
    values: BTreeMap<String, Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct PostingLine {
    field: String,
    token: String,
    rows: Vec<u32>,
}

fn corrupt(file: &str, offset: usize, detail: impl Into<String>) -> StoreError {
    StoreError::CorruptStore { file: file.to_string(), offset: offset as u64, detail: detail.into() }
}

fn io(path: &Path, e: std::io::Error) -> StoreError {
    StoreError::Io(format!("{}: {e}", path.display()))
}

impl AnnotationStore {
    fn fast_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let mut header = vec!["doc_id".to_string()];
        header.extend(self.fast.columns.iter().map(|c| format!("{}:{}", c.name, c.value_type.as_str())));
        w.write_record(&header).expect("in-memory write");
        for (r, id) in self.doc_ids.iter().enumerate() {
            let mut rec = vec![id.as_str()];
            rec.extend(self.fast.cells.iter().map(|col| col[r].as_deref().unwrap_or("")));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }

    fn docs_jsonl(&self) -> String {
        let mut out = String::new();
        for (r, id) in self.doc_ids.iter().enumerate() {
            let line = DocLine { doc_id: id.clone(), raw: self.raw_spans[r].map(|s| [s.offset, s.len]), values: self.docs.values[r].clone() };
            out.push_str(&serde_json::to_string(&line).expect("serializable"));
            out.push('\n');
        }
        out
    }

    fn postings_jsonl(&self) -> String {
        let mut out = String::new();
        for (field, token, rows) in self.docs.postings() {
            let line = PostingLine { field: field.to_string(), token: token.to_string(), rows: rows.clone() };
            out.push_str(&serde_json::to_string(&line).expect("serializable"));
            out.push('\n');
        }
        out
    }

    fn manifest_json(&self) -> String {
        serde_json::to_string_pretty(&self.manifest).expect("serializable") + "\n"
    }

    fn files(&self) -> [(&'static str, String); 5] {
        [
            (MANIFEST, self.manifest_json()),
            (SCHEMA, self.schema.to_canonical_json()),
            (FAST, self.fast_csv()),
            (DOCS, self.docs_jsonl()),
            (POSTINGS, self.postings_jsonl()),
        ]
    }

    /// Serialized size of the data files (manifest and schema excluded).
    pub fn footprint(&self) -> StoreFootprint {
        StoreFootprint {
            fast_bytes: self.fast_csv().len(),
            doc_bytes: self.docs_jsonl().len(),
            postings_bytes: self.postings_jsonl().len(),
        }
    }

    /// Write the store to `dir`. The files are written into a sibling
    /// temporary directory which then replaces `dir` by rename.
    pub fn persist(&self, dir: &Path) -> Result<(), StoreError> {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "store".into());
        let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
        let pid = std::process::id();
        let tmp = parent.join(format!(".{name}.tmp-{pid}"));
        let old = parent.join(format!(".{name}.old-{pid}"));
        let _ = fs::remove_dir_all(&tmp);
        fs::create_dir(&tmp).map_err(|e| io(&tmp, e))?;
        for (file, body) in self.files() {
            let path = tmp.join(file);
            fs::write(&path, body).map_err(|e| io(&path, e))?;
        }
        let had_old = dir.exists();
        if had_old {
            fs::rename(dir, &old).map_err(|e| io(dir, e))?;
        }
        fs::rename(&tmp, dir).map_err(|e| io(dir, e))?;
        if had_old {
            fs::remove_dir_all(&old).map_err(|e| io(&old, e))?;
        }
        Ok(())
    }

    pub fn open(dir: &Path, options: &OpenOptions) -> Result<AnnotationStore, StoreError> {
        let read = |name: &str| -> Result<String, StoreError> {
            let path = dir.join(name);
            let bytes = fs::read(&path).map_err(|e| io(&path, e))?;
            String::from_utf8(bytes).map_err(|e| corrupt(name, e.utf8_error().valid_up_to(), "invalid utf-8"))
        };
        let manifest_text = read(MANIFEST)?;
        let manifest: Manifest = serde_json::from_str(&manifest_text)
            .map_err(|e| corrupt(MANIFEST, line_offset(&manifest_text, e.line()), e.to_string()))?;
        let schema_text = read(SCHEMA)?;
        let schema = Schema::from_json(&schema_text).map_err(|e| corrupt(SCHEMA, 0, e.to_string()))?;
        if schema.schema_id != manifest.schema_id {
            return Err(corrupt(MANIFEST, 0, "schema id does not match schema.json"));
        }
        let fast_text = read(FAST)?;
        let docs_text = read(DOCS)?;
        let postings_text = read(POSTINGS)?;

        let mut rows = parse_docs(&docs_text)?;
        merge_fast(&fast_text, &schema, &mut rows)?;
        if rows.len() != manifest.doc_count {
            return Err(corrupt(MANIFEST, 0, format!("doc_count {} but {} rows", manifest.doc_count, rows.len())));
        }
        let mut store = AnnotationStore::from_rows(schema, manifest, rows)
            .map_err(|e| corrupt(FAST, 0, e.to_string()))?;

        let on_disk = [
            (MANIFEST, manifest_text),
            (SCHEMA, schema_text),
            (FAST, fast_text),
            (DOCS, docs_text),
            (POSTINGS, postings_text),
        ];
        for ((name, expected), (_, found)) in store.files().iter().zip(&on_disk) {
            if expected != found {
                let offset = first_difference(expected.as_bytes(), found.as_bytes());
                return Err(corrupt(name, offset, "content does not match the stored data"));
            }
        }

        if let Some(path) = &options.corpus {
            store.attach_corpus(path, options.strict)?;
        }
        Ok(store)
    }

    /// Load raw document text through the recorded spans of a corpus file.
    fn attach_corpus(&mut self, path: &Path, strict: bool) -> Result<(), StoreError> {
        let bytes = fs::read(path).map_err(|e| io(path, e))?;
        let fingerprint = sha256_hex(&bytes);
        if fingerprint != self.manifest.corpus_sha256 {
            if strict {
                return Err(corrupt(
                    MANIFEST,
                    0,
                    format!("corpus fingerprint {fingerprint} does not match {}", self.manifest.corpus_sha256),
                ));
            }
            self.warnings.push(format!("corpus {} has changed since the store was built", path.display()));
        }
        let texts = self
            .doc_ids
            .iter()
            .zip(&self.raw_spans)
            .map(|(id, span)| {
                let span = (*span)?;
                let (start, end) = (span.offset as usize, (span.offset + span.len) as usize);
                let doc = parse_line(bytes.get(start..end)?, 0).ok()?;
                (doc.doc_id == *id).then_some(doc.text)
            })
            .collect::<Vec<_>>();
        let missing = texts.iter().filter(|t| t.is_none()).count();
        if missing > 0 {
            self.warnings.push(format!("raw text unavailable for {missing} documents"));
        }
        self.raw_text = Some(Arc::new(texts));
        Ok(())
    }

    /// Attach raw text from memory, keyed by doc id.
    pub fn attach_texts(&mut self, corpus: &crate::corpus::Corpus) {
        let texts = self.doc_ids.iter().map(|id| corpus.get(id).map(|d| d.text.clone())).collect();
        self.raw_text = Some(Arc::new(texts));
    }
}

fn line_offset(text: &str, line: usize) -> usize {
    text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum()
}

fn first_difference(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).position(|(x, y)| x != y).unwrap_or(a.len().min(b.len()))
}

fn parse_docs(text: &str) -> Result<Vec<RowData>, StoreError> {
    let mut rows = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let body = line.strip_suffix('\n').ok_or_else(|| corrupt(DOCS, offset + line.len(), "truncated line"))?;
        let d: DocLine = serde_json::from_str(body).map_err(|e| corrupt(DOCS, offset + e.column().saturating_sub(1), e.to_string()))?;
        rows.push(RowData { doc_id: d.doc_id, raw: d.raw.map(|[offset, len]| RawSpan { offset, len }), values: d.values });
        offset += line.len();
    }
    Ok(rows)
}

fn merge_fast(text: &str, schema: &Schema, rows: &mut [RowData]) -> Result<(), StoreError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| corrupt(FAST, 0, e.to_string()))?.clone();
    let mut cols = Vec::new();
    for (i, cell) in header.iter().enumerate().skip(1) {
        let (name, ty) = cell.split_once(':').ok_or_else(|| corrupt(FAST, 0, format!("header cell {i} lacks a type")))?;
        let field = schema.field(name).ok_or_else(|| corrupt(FAST, 0, format!("unknown column {name:?}")))?;
        if ValueType::parse(ty) != Some(field.value_type) {
            return Err(corrupt(FAST, 0, format!("column {name:?} has type {ty:?}")));
        }
        cols.push(name.to_string());
    }
    let mut count = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| corrupt(FAST, e.position().map_or(0, |p| p.byte() as usize), e.to_string()))?;
        let at = rec.position().map_or(0, |p| p.byte() as usize);
        let row = rows.get_mut(r).ok_or_else(|| corrupt(FAST, at, "more rows than docs.jsonl"))?;
        if rec.get(0) != Some(row.doc_id.as_str()) {
            return Err(corrupt(FAST, at, format!("row {r} is not {:?}", row.doc_id)));
        }
        for (name, cell) in cols.iter().zip(rec.iter().skip(1)) {
            if !cell.is_empty() {
                row.values.insert(name.clone(), vec![cell.to_string()]);
            }
        }
        count += 1;
    }
    if count != rows.len() {
        return Err(corrupt(FAST, text.len(), "fewer rows than docs.jsonl"));
    }
    Ok(())
}
