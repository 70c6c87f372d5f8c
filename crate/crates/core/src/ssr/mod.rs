//! Two-stage structured retrieval over an [`AnnotationStore`].
//!
//! Queries are written in a small SQL dialect. Constraints on schema
//! fields are resolved through the store indexes first; `EXTRACT`
//! predicates then scan the raw text of the surviving documents only.
//! Nothing on this path calls an annotator or any external service.
//!
//! [`AnnotationStore`]: crate::index::AnnotationStore

pub mod ast;
mod exec;
pub mod extract;
mod lexer;
pub mod nl;
mod parser;
pub mod table;

use thiserror::Error;

pub use exec::{execute, plan, plan_in, run_script, Env, LatencyProfile, Plan, ScriptOutput, StatementRun, STORE_NAME};
pub use extract::{eval_extract, Captured};
pub use nl::{bind_nl_query, Binding, NlDraft, DEFAULT_TAU_BIND};
pub use parser::{parse_query, parse_script};
pub use table::{Cell, ColumnKind, ResultTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SsrError {
    #[error("syntax error at {line}:{col}: expected {expected}, found {found}")]
    Syntax { line: usize, col: usize, expected: String, found: String },
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("type error on `{field}`: {detail}")]
    TypeError { field: String, detail: String },
    #[error("unknown temp table `{0}`")]
    UnknownTempTable(String),
    #[error("{0}")]
    Semantic(String),
    #[error("execution failed on document {doc_id}: {detail}")]
    Execution { doc_id: String, detail: String },
}

impl SsrError {
    /// CLI exit code class: 2 syntax, 3 semantic, 4 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            SsrError::Syntax { .. } => 2,
            SsrError::Execution { .. } => 4,
            _ => 3,
        }
    }
}
