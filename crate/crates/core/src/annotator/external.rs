//! Client side of the external annotator protocol (v1).
//!
//! One JSON object per line. Requests:
//! `{"v":1,"doc_id":"...","text":"...","fields":[{"name","type","description"}]}`;
//! responses: `{"v":1,"doc_id":"...","values":{"field":["..."]}}`, or
//! `{"v":1,"doc_id":"...","error":"..."}` for a per-document failure. Every
//! request doc_id must be answered exactly once, in any order, with only the
//! requested fields.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::schema::FieldSpec;

pub const PROTOCOL_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Endpoint {
    /// A subprocess speaking the protocol over stdin/stdout.
    Command {
        program: String,
        #[serde(default)]
        args: Vec<String>,
    },
    /// POST the request lines as the body; the response body holds the
    /// response lines.
    Http { url: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalConfig {
    pub endpoint: Endpoint,
    #[serde(default = "default_timeout")]
    pub timeout_seconds: f64,
}

fn default_timeout() -> f64 {
    30.0
}

impl ExternalConfig {
    pub fn command(program: &str, args: &[&str]) -> Self {
        ExternalConfig {
            endpoint: Endpoint::Command {
                program: program.into(),
                args: args.iter().map(|s| s.to_string()).collect(),
            },
            timeout_seconds: default_timeout(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExternalError {
    #[error("protocol error at response line {line}: {detail}")]
    Protocol { line: usize, detail: String },
    #[error("external annotator timed out after {0:.1}s")]
    Timeout(f64),
    #[error("protocol version mismatch: expected {PROTOCOL_VERSION}, got {found}")]
    VersionMismatch { found: String },
    #[error("could not reach external annotator: {0}")]
    Unreachable(String),
}

#[derive(Serialize)]
struct WireField<'a> {
    name: &'a str,
    #[serde(rename = "type")]
    value_type: &'a str,
    description: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    v: u64,
    doc_id: &'a str,
    text: &'a str,
    fields: &'a [WireField<'a>],
}

/// Raw answers keyed by doc_id, before normalization and type coercion.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalResponse {
    pub values: BTreeMap<String, BTreeMap<String, Vec<String>>>,
    pub errors: BTreeMap<String, String>,
}

pub fn request_lines(docs: &[&Document], fields: &[FieldSpec]) -> String {
    let wire: Vec<WireField<'_>> = fields
        .iter()
        .map(|f| WireField {
            name: &f.name,
            value_type: f.value_type.as_str(),
            description: &f.description,
        })
        .collect();
    let mut out = String::new();
    for d in docs {
        let req = WireRequest { v: PROTOCOL_VERSION, doc_id: &d.doc_id, text: &d.text, fields: &wire };
        out.push_str(&serde_json::to_string(&req).expect("request serializes"));
        out.push('\n');
    }
    out
}

/// Validate a response transcript against the requested doc_ids and fields.
pub fn check_transcript(
    requested: &[&str],
    fields: &BTreeSet<&str>,
    lines: &[String],
) -> Result<ExternalResponse, ExternalError> {
    let wanted: BTreeSet<&str> = requested.iter().copied().collect();
    let mut out = ExternalResponse::default();
    let mut seen = BTreeSet::new();
    let proto = |line: usize, detail: String| ExternalError::Protocol { line, detail };
    let mut line_no = 0;
    for raw in lines {
        line_no += 1;
        if raw.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value =
            serde_json::from_str(raw).map_err(|e| proto(line_no, format!("invalid JSON: {e}")))?;
        let obj = v.as_object().ok_or_else(|| proto(line_no, "not an object".into()))?;
        match obj.get("v") {
            Some(serde_json::Value::Number(n)) if n.as_u64() == Some(PROTOCOL_VERSION) => {}
            Some(other) => return Err(ExternalError::VersionMismatch { found: other.to_string() }),
            None => return Err(proto(line_no, "missing `v`".into())),
        }
        let doc_id = obj
            .get("doc_id")
            .and_then(|d| d.as_str())
            .ok_or_else(|| proto(line_no, "missing `doc_id`".into()))?;
        if !wanted.contains(doc_id) {
            return Err(proto(line_no, format!("unrequested doc_id {doc_id:?}")));
        }
        if !seen.insert(doc_id.to_string()) {
            return Err(proto(line_no, format!("duplicate response for {doc_id:?}")));
        }
        if let Some(err) = obj.get("error") {
            let msg = err.as_str().map_or_else(|| err.to_string(), str::to_string);
            out.errors.insert(doc_id.to_string(), msg);
            continue;
        }
        let values = obj
            .get("values")
            .and_then(|v| v.as_object())
            .ok_or_else(|| proto(line_no, "missing `values` object".into()))?;
        let mut fv = BTreeMap::new();
        for (name, list) in values {
            if !fields.contains(name.as_str()) {
                return Err(proto(line_no, format!("unrequested field {name:?}")));
            }
            let arr = list
                .as_array()
                .ok_or_else(|| proto(line_no, format!("values for {name:?} not an array")))?;
            let mut vals = Vec::with_capacity(arr.len());
            for item in arr {
                let s = item
                    .as_str()
                    .ok_or_else(|| proto(line_no, format!("non-string value for {name:?}")))?;
                vals.push(s.to_string());
            }
            fv.insert(name.clone(), vals);
        }
        out.values.insert(doc_id.to_string(), fv);
    }
    if let Some(missing) = requested.iter().find(|d| !seen.contains(**d)) {
        return Err(proto(line_no + 1, format!("missing response for doc_id {missing:?}")));
    }
    Ok(out)
}

/// Send `docs` to the endpoint and validate the answers.
pub fn external_annotate(
    docs: &[&Document],
    fields: &[FieldSpec],
    cfg: &ExternalConfig,
) -> Result<ExternalResponse, ExternalError> {
    let body = request_lines(docs, fields);
    let timeout = Duration::from_secs_f64(cfg.timeout_seconds.max(0.001));
    let lines = match &cfg.endpoint {
        Endpoint::Command { program, args } => run_command(program, args, body, timeout)?,
        Endpoint::Http { url } => post_http(url, &body, timeout)?,
    };
    let requested: Vec<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
    let names: BTreeSet<&str> = fields.iter().map(|f| f.name.as_str()).collect();
    check_transcript(&requested, &names, &lines)
}

fn run_command(
    program: &str,
    args: &[String],
    body: String,
    timeout: Duration,
) -> Result<Vec<String>, ExternalError> {
    let expected = body.lines().count();
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| ExternalError::Unreachable(format!("{program}: {e}")))?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let stdout = child.stdout.take().expect("piped stdout");
    let writer = std::thread::spawn(move || {
        // a peer that exits early closes the pipe; its answers decide the outcome
        let _ = stdin.write_all(body.as_bytes());
    });
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for line in BufReader::new(stdout).lines() {
            match line {
                Ok(l) => {
                    if tx.send(Some(l)).is_err() {
                        return;
                    }
                }
                Err(_) => break,
            }
        }
        let _ = tx.send(None);
    });
    let deadline = Instant::now() + timeout;
    let mut lines = Vec::new();
    let mut answered = 0;
    loop {
        let left = deadline.saturating_duration_since(Instant::now());
        match rx.recv_timeout(left) {
            Ok(Some(l)) => {
                if !l.trim().is_empty() {
                    answered += 1;
                }
                lines.push(l);
                if answered >= expected {
                    break;
                }
            }
            Ok(None) | Err(mpsc::RecvTimeoutError::Disconnected) => break,
            Err(mpsc::RecvTimeoutError::Timeout) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(ExternalError::Timeout(timeout.as_secs_f64()));
            }
        }
    }
    let _ = writer.join();
    let _ = child.kill();
    let _ = child.wait();
    Ok(lines)
}

fn post_http(url: &str, body: &str, timeout: Duration) -> Result<Vec<String>, ExternalError> {
    let resp = ureq::post(url)
        .timeout(timeout)
        .set("Content-Type", "application/x-ndjson")
        .send_string(body)
        .map_err(|e| match e {
            ureq::Error::Transport(t) if t.kind() == ureq::ErrorKind::Io => {
                let msg = t.to_string();
                if msg.contains("timed out") {
                    ExternalError::Timeout(timeout.as_secs_f64())
                } else {
                    ExternalError::Unreachable(msg)
                }
            }
            other => ExternalError::Unreachable(other.to_string()),
        })?;
    let text = resp.into_string().map_err(|e| ExternalError::Unreachable(e.to_string()))?;
    Ok(text.lines().map(str::to_string).collect())
}
