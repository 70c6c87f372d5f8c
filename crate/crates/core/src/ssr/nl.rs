//! Deterministic binder from a natural-language question to a draft
//! query. Drafts are suggestions; callers show the dialect text before
//! running it.

use serde::Serialize;

use super::ast::{Cond, ExtractSpec, Expr, Projection, Select, SourceRef};
use super::exec::STORE_NAME;
use crate::corpus::{embed, tokenize, tokenize_spans};
use crate::schema::{FieldSpec, Schema, ValueType};
use crate::value::{CompareOp, Literal};

pub const DEFAULT_TAU_BIND: f64 = 0.6;

const STOPWORDS: &[&str] = &[
    "a", "about", "all", "an", "and", "any", "are", "as", "at", "be", "by", "do", "does", "each", "for", "from", "get",
    "give", "how", "i", "in", "is", "it", "its", "list", "many", "me", "mentioning", "containing", "of", "on", "or",
    "show", "than", "that", "the", "their", "them", "there", "these", "those", "to", "was", "were", "what", "when",
    "where", "which", "who", "with", "find", "please", "all",
];

const TOPIC_CUES: &[&str] = &["mentioning", "containing", "about", "mention", "mentions"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Binding {
    pub span: String,
    /// Bound field, or the extract alias for suggested EXTRACT predicates.
    pub target: String,
    /// `constraint`, `projection` or `extract`.
    pub role: &'static str,
    /// `exact`, `embedding`, `comparison` or `cue`.
    pub how: &'static str,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlDraft {
    pub select: Select,
    pub bound: Vec<Binding>,
    pub unbound: Vec<String>,
}

impl NlDraft {
    /// Dialect text of the draft.
    pub fn dialect(&self) -> String {
        self.select.to_string()
    }

    pub fn is_empty(&self) -> bool {
        self.bound.is_empty()
    }
}

#[derive(Debug, Clone)]
struct Tok {
    text: String,
    used: bool,
}

fn is_stop(t: &str) -> bool {
    STOPWORDS.contains(&t)
}

fn is_number(t: &str) -> bool {
    t.chars().next().is_some_and(|c| c.is_ascii_digit()) && t.replace(',', "").parse::<f64>().is_ok()
}

fn name_tokens(f: &FieldSpec) -> Vec<String> {
    tokenize(&f.name.replace('_', " "))
}

fn comparison_at(toks: &[Tok], i: usize) -> Option<(CompareOp, usize, bool)> {
    // (op, words consumed, is a date boundary word)
    let w = |k: usize| toks.get(i + k).map(|t| t.text.as_str());
    match (w(0), w(1)) {
        (Some("after"), _) | (Some("since"), _) => Some((CompareOp::Gt, 1, true)),
        (Some("before"), _) => Some((CompareOp::Lt, 1, true)),
        (Some("at"), Some("least")) => Some((CompareOp::Ge, 2, false)),
        (Some("at"), Some("most")) => Some((CompareOp::Le, 2, false)),
        (Some("more"), Some("than")) | (Some("greater"), Some("than")) => Some((CompareOp::Gt, 2, false)),
        (Some("less"), Some("than")) | (Some("fewer"), Some("than")) => Some((CompareOp::Lt, 2, false)),
        (Some("over"), _) | (Some("above"), _) | (Some("exceeding"), _) => Some((CompareOp::Gt, 1, false)),
        (Some("under"), _) | (Some("below"), _) => Some((CompareOp::Lt, 1, false)),
        _ => None,
    }
}

/// Bind `nl` against `schema`. Never fails; the worst case is an empty
/// draft with every span unbound.
pub fn bind_nl_query(nl: &str, schema: &Schema, tau_bind: f64) -> NlDraft {
    let mut bound = Vec::new();
    let mut conditions = Vec::new();
    let mut projections: Vec<String> = Vec::new();

    // Quoted phrases become EXTRACT suggestions and leave the token stream.
    let mut rest = String::new();
    let mut quoted = Vec::new();
    let mut chars = nl.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '"' || c == '\'' && rest.chars().last().is_none_or(|p| !p.is_alphanumeric()) {
            let mut q = String::new();
            let mut closed = false;
            for d in chars.by_ref() {
                if d == c {
                    closed = true;
                    break;
                }
                q.push(d);
            }
            if closed && !q.trim().is_empty() {
                quoted.push(q.trim().to_string());
                rest.push(' ');
                continue;
            }
            rest.push(' ');
            rest.push_str(&q);
        } else {
            rest.push(c);
        }
    }
    let mut toks: Vec<Tok> = tokenize_spans(&rest).into_iter().map(|t| Tok { text: t.text, used: false }).collect();
    let mut n_extract = 0;
    let mut add_extract = |phrase: &str, how: &'static str, bound: &mut Vec<Binding>, conditions: &mut Vec<Expr>| {
        n_extract += 1;
        let alias = format!("mention_{n_extract}");
        bound.push(Binding { span: phrase.to_string(), target: alias.clone(), role: "extract", how, score: 1.0 });
        conditions.push(Expr::Extract(ExtractSpec {
            qualifier: None,
            alias,
            cond: Cond::Contains(phrase.to_string()),
            value_cmp: Vec::new(),
        }));
    };
    for q in &quoted {
        add_extract(q, "cue", &mut bound, &mut conditions);
    }

    // Vocabulary values of categorical fields.
    let mut values: Vec<(usize, usize, &FieldSpec, String)> = Vec::new();
    for f in schema.fields.iter().filter(|f| f.value_type == ValueType::Categorical) {
        for v in f.vocabulary.iter().flatten() {
            let vt = tokenize(v);
            if vt.is_empty() || vt.len() > toks.len() {
                continue;
            }
            for i in 0..=toks.len() - vt.len() {
                if toks[i..i + vt.len()].iter().map(|t| &t.text).eq(vt.iter())
                    && toks[i..i + vt.len()].iter().all(|t| !t.used)
                {
                    values.push((i, vt.len(), f, vt.join(" ")));
                }
            }
        }
    }
    let mut constrained: Vec<String> = Vec::new();
    for (i, len, f, v) in values {
        if toks[i..i + len].iter().any(|t| t.used) || constrained.contains(&f.name) {
            continue;
        }
        toks[i..i + len].iter_mut().for_each(|t| t.used = true);
        bound.push(Binding { span: v.clone(), target: f.name.clone(), role: "constraint", how: "exact", score: 1.0 });
        conditions.push(Expr::Compare { col: col(&f.name), op: CompareOp::Eq, value: Literal::Str(v) });
        constrained.push(f.name.clone());
    }

    // Exact name hits, longest names first.
    let mut fields: Vec<&FieldSpec> = schema.fields.iter().collect();
    fields.sort_by_key(|f| std::cmp::Reverse(name_tokens(f).len()));
    let mut hits: Vec<(usize, usize, &FieldSpec)> = Vec::new();
    for f in &fields {
        let nt = name_tokens(f);
        if nt.is_empty() {
            continue;
        }
        for i in 0..toks.len().saturating_sub(nt.len() - 1) {
            if toks[i..i + nt.len()].iter().all(|t| !t.used) && toks[i..i + nt.len()].iter().map(|t| &t.text).eq(nt.iter()) {
                toks[i..i + nt.len()].iter_mut().for_each(|t| t.used = true);
                hits.push((i, nt.len(), f));
            }
        }
    }
    hits.sort_by_key(|h| h.0);

    // Comparisons: word(s) followed by a number or year.
    let mut i = 0;
    while i < toks.len() {
        let Some((op, words, date_word)) = (!toks[i].used).then(|| comparison_at(&toks, i)).flatten() else {
            i += 1;
            continue;
        };
        let Some(num_tok) = toks.get(i + words).filter(|t| !t.used && is_number(&t.text)) else {
            i += 1;
            continue;
        };
        let n: f64 = num_tok.text.replace(',', "").parse().expect("checked numeric");
        let is_year = num_tok.text.len() == 4 && n.fract() == 0.0 && (1000.0..=2999.0).contains(&n);
        let want_date = date_word || is_year;
        let near_hit = hits
            .iter()
            .filter(|(h, _, f)| {
                *h <= i && (if want_date { f.value_type == ValueType::Date } else { f.value_type == ValueType::Number })
            })
            .map(|(_, _, f)| *f)
            .next_back();
        let target = near_hit.or_else(|| {
            let vt = if want_date { ValueType::Date } else { ValueType::Number };
            let of_type: Vec<&FieldSpec> = schema.fields.iter().filter(|f| f.value_type == vt).collect();
            (of_type.len() == 1).then(|| of_type[0])
        });
        let Some(f) = target else {
            i += 1;
            continue;
        };
        let (op, value) = if f.value_type == ValueType::Date && is_year {
            let y = n as i64;
            match op {
                CompareOp::Gt | CompareOp::Le => (op, Literal::Str(format!("{y}-12-31"))),
                _ => (op, Literal::Str(format!("{y}-01-01"))),
            }
        } else if f.value_type == ValueType::Date {
            i += 1;
            continue;
        } else {
            (op, Literal::Num(n))
        };
        let span: Vec<String> = toks[i..=i + words].iter().map(|t| t.text.clone()).collect();
        toks[i..=i + words].iter_mut().for_each(|t| t.used = true);
        bound.push(Binding {
            span: span.join(" "),
            target: f.name.clone(),
            role: "constraint",
            how: "comparison",
            score: 1.0,
        });
        conditions.push(Expr::Compare { col: col(&f.name), op, value });
        constrained.push(f.name.clone());
        i += words + 1;
    }

    // Topic cues: the run after "mentioning"/"about" becomes a contains EXTRACT.
    let mut i = 0;
    while i < toks.len() {
        if !toks[i].used && TOPIC_CUES.contains(&toks[i].text.as_str()) {
            let mut j = i + 1;
            while j < toks.len() && !toks[j].used && is_stop(&toks[j].text) {
                j += 1;
            }
            let start = j;
            while j < toks.len() && !toks[j].used && !is_stop(&toks[j].text) && comparison_at(&toks, j).is_none() {
                j += 1;
            }
            if j > start {
                let phrase: Vec<String> = toks[start..j].iter().map(|t| t.text.clone()).collect();
                toks[i..j].iter_mut().for_each(|t| t.used = true);
                add_extract(&phrase.join(" "), "cue", &mut bound, &mut conditions);
            }
            i = j.max(i + 1);
        } else {
            i += 1;
        }
    }

    // Name hits: categorical fields grab the surrounding free words as a
    // value; everything else is projected.
    for (i, len, f) in &hits {
        if constrained.contains(&f.name) {
            continue;
        }
        let free = |t: &Tok| !t.used && !is_stop(&t.text) && !is_number(&t.text);
        let mut lo = *i;
        while lo > 0 && free(&toks[lo - 1]) && comparison_at(&toks, lo - 1).is_none() {
            lo -= 1;
        }
        let mut hi = i + len;
        while hi < toks.len() && free(&toks[hi]) && comparison_at(&toks, hi).is_none() {
            hi += 1;
        }
        if f.value_type == ValueType::Categorical && (lo < *i || hi > i + len) {
            let value: Vec<String> = toks[lo..hi].iter().map(|t| t.text.clone()).collect();
            let value = value.join(" ");
            toks[lo..hi].iter_mut().for_each(|t| t.used = true);
            bound.push(Binding { span: value.clone(), target: f.name.clone(), role: "constraint", how: "exact", score: 1.0 });
            conditions.push(Expr::Compare { col: col(&f.name), op: CompareOp::Eq, value: Literal::Str(value) });
            constrained.push(f.name.clone());
        } else if !projections.contains(&f.name) {
            let span: Vec<String> = toks[*i..i + len].iter().map(|t| t.text.clone()).collect();
            bound.push(Binding { span: span.join(" "), target: f.name.clone(), role: "projection", how: "exact", score: 1.0 });
            projections.push(f.name.clone());
        }
    }

    // Remaining free runs: embedding match to a field signature, else unbound.
    let mut unbound = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        if toks[i].used || is_stop(&toks[i].text) {
            i += 1;
            continue;
        }
        let start = i;
        while i < toks.len() && !toks[i].used && !is_stop(&toks[i].text) {
            i += 1;
        }
        let span: Vec<&str> = toks[start..i].iter().map(|t| t.text.as_str()).collect();
        let span = span.join(" ");
        let e = embed(&span);
        let best = schema
            .fields
            .iter()
            .map(|f| (e.cosine(&embed(&f.signature())), f))
            .filter(|(c, _)| *c >= tau_bind)
            .max_by(|a, b| a.0.total_cmp(&b.0));
        match best {
            Some((c, f)) if !projections.contains(&f.name) && !constrained.contains(&f.name) => {
                bound.push(Binding { span, target: f.name.clone(), role: "projection", how: "embedding", score: c });
                projections.push(f.name.clone());
            }
            _ => unbound.push(span),
        }
    }

    let projections = if projections.is_empty() {
        vec![Projection::Column { col: col("doc_id"), alias: None }]
    } else {
        projections.iter().map(|p| Projection::Column { col: col(p), alias: None }).collect()
    };
    let select = Select {
        projections,
        source: SourceRef { name: STORE_NAME.to_string(), alias: None },
        joins: Vec::new(),
        conditions,
        group_by: Vec::new(),
        order_by: Vec::new(),
        limit: None,
    };
    NlDraft { select, bound, unbound }
}

fn col(name: &str) -> super::ast::ColumnRef {
    super::ast::ColumnRef::new(name)
}
