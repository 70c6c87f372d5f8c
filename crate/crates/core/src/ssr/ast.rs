//! Syntax tree of the query dialect. `Display` renders valid dialect text.

use std::fmt;

use regex::Regex;

use crate::value::{CompareOp, Literal};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ColumnRef {
    pub qualifier: Option<String>,
    pub name: String,
}

impl ColumnRef {
    pub fn new(name: &str) -> Self {
        ColumnRef { qualifier: None, name: name.to_string() }
    }

    pub fn qualified(q: &str, name: &str) -> Self {
        ColumnRef { qualifier: Some(q.to_string()), name: name.to_string() }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.qualifier {
            Some(q) => write!(f, "{q}.{}", self.name),
            None => f.write_str(&self.name),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AggFunc {
    Count,
    Sum,
    Avg,
    Min,
    Max,
}

impl AggFunc {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.to_ascii_lowercase().as_str() {
            "count" => AggFunc::Count,
            "sum" => AggFunc::Sum,
            "avg" => AggFunc::Avg,
            "min" => AggFunc::Min,
            "max" => AggFunc::Max,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AggFunc::Count => "count",
            AggFunc::Sum => "sum",
            AggFunc::Avg => "avg",
            AggFunc::Min => "min",
            AggFunc::Max => "max",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    Star,
    Column { col: ColumnRef, alias: Option<String> },
    /// `arg == None` is `COUNT(*)`.
    Aggregate { func: AggFunc, arg: Option<ColumnRef>, alias: Option<String> },
}

impl fmt::Display for Projection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let alias = match self {
            Projection::Star => return f.write_str("*"),
            Projection::Column { col, alias } => {
                write!(f, "{col}")?;
                alias
            }
            Projection::Aggregate { func, arg, alias } => {
                match arg {
                    Some(a) => write!(f, "{}({a})", func.as_str().to_uppercase())?,
                    None => write!(f, "{}(*)", func.as_str().to_uppercase())?,
                }
                alias
            }
        };
        if let Some(a) = alias {
            write!(f, " AS {a}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceRef {
    pub name: String,
    pub alias: Option<String>,
}

impl SourceRef {
    /// The name columns are qualified with.
    pub fn binding(&self) -> &str {
        self.alias.as_deref().unwrap_or(&self.name)
    }
}

impl fmt::Display for SourceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.alias {
            Some(a) => write!(f, "{} AS {a}", self.name),
            None => f.write_str(&self.name),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Join {
    pub source: SourceRef,
    pub left: ColumnRef,
    pub right: ColumnRef,
}

#[derive(Debug, Clone)]
pub enum Cond {
    Regex { pattern: String, re: Regex },
    Contains(String),
    Near { a: String, b: String, window: usize },
}

impl PartialEq for Cond {
    fn eq(&self, other: &Self) -> bool {
        self.to_string() == other.to_string()
    }
}

impl Cond {
    /// Evaluation cost rank used for ordering: contains < regex < near.
    pub fn cost_rank(&self) -> u8 {
        match self {
            Cond::Contains(_) => 0,
            Cond::Regex { .. } => 1,
            Cond::Near { .. } => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Cond::Regex { .. } => "regex",
            Cond::Contains(_) => "contains",
            Cond::Near { .. } => "near",
        }
    }

    /// Parse `regex:…`, `contains:…` or `near:a,b,window`.
    pub fn parse(text: &str) -> Result<Cond, String> {
        let (kind, payload) = text.split_once(':').ok_or("condition must start with regex:, contains: or near:")?;
        match kind.to_ascii_lowercase().as_str() {
            "regex" => {
                let re = Regex::new(payload).map_err(|e| format!("invalid regex: {e}"))?;
                if re.captures_len() > 2 {
                    return Err("regex may have at most one capture group".into());
                }
                Ok(Cond::Regex { pattern: payload.to_string(), re })
            }
            "contains" => {
                if payload.trim().is_empty() {
                    return Err("contains: needs a literal".into());
                }
                Ok(Cond::Contains(payload.to_string()))
            }
            "near" => {
                let parts: Vec<&str> = payload.split(',').map(str::trim).collect();
                let [a, b, w] = parts.as_slice() else {
                    return Err("near: expects termA,termB,window".into());
                };
                let window: usize = w.parse().map_err(|_| format!("window {w:?} is not a positive integer"))?;
                if window == 0 || a.is_empty() || b.is_empty() {
                    return Err("near: needs two terms and a window of at least 1".into());
                }
                Ok(Cond::Near { a: a.to_string(), b: b.to_string(), window })
            }
            other => Err(format!("unknown condition kind {other:?}")),
        }
    }
}

impl fmt::Display for Cond {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cond::Regex { pattern, .. } => write!(f, "regex:{pattern}"),
            Cond::Contains(s) => write!(f, "contains:{s}"),
            Cond::Near { a, b, window } => write!(f, "near:{a},{b},{window}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractSpec {
    /// Source binding the text comes from; `None` when there is only one.
    pub qualifier: Option<String>,
    pub alias: String,
    pub cond: Cond,
    /// Comparisons on the captured value, all of which must hold.
    pub value_cmp: Vec<(CompareOp, Literal)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    And(Vec<Expr>),
    Or(Vec<Expr>),
    Compare { col: ColumnRef, op: CompareOp, value: Literal },
    In { col: ColumnRef, values: Vec<Literal> },
    Contains { col: ColumnRef, text: String },
    Extract(ExtractSpec),
}

fn quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::And(xs) => {
                let parts: Vec<String> = xs.iter().map(|x| x.to_string()).collect();
                write!(f, "{}", parts.join(" AND "))
            }
            Expr::Or(xs) => {
                let parts: Vec<String> = xs
                    .iter()
                    .map(|x| if matches!(x, Expr::And(_)) { format!("({x})") } else { x.to_string() })
                    .collect();
                write!(f, "({})", parts.join(" OR "))
            }
            Expr::Compare { col, op, value } => write!(f, "{col} {op} {value}"),
            Expr::In { col, values } => {
                let parts: Vec<String> = values.iter().map(|v| v.to_string()).collect();
                write!(f, "{col} IN ({})", parts.join(", "))
            }
            Expr::Contains { col, text } => write!(f, "{col} CONTAINS {}", quote(text)),
            Expr::Extract(x) => {
                let target = match &x.qualifier {
                    Some(q) => format!("{q}.{}", x.alias),
                    None => x.alias.clone(),
                };
                write!(f, "EXTRACT({target}, {})", quote(&x.cond.to_string()))?;
                for (op, v) in &x.value_cmp {
                    write!(f, " AND {target} {op} {v}")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderItem {
    pub key: Projection,
    pub desc: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Select {
    pub projections: Vec<Projection>,
    pub source: SourceRef,
    pub joins: Vec<Join>,
    /// Top-level conjuncts of the WHERE clause.
    pub conditions: Vec<Expr>,
    pub group_by: Vec<ColumnRef>,
    pub order_by: Vec<OrderItem>,
    pub limit: Option<usize>,
}

impl Select {
    pub fn schema_constraints(&self) -> impl Iterator<Item = &Expr> {
        self.conditions.iter().filter(|c| !matches!(c, Expr::Extract(_)))
    }

    pub fn extract_predicates(&self) -> impl Iterator<Item = &ExtractSpec> {
        self.conditions.iter().filter_map(|c| match c {
            Expr::Extract(x) => Some(x),
            _ => None,
        })
    }
}

impl fmt::Display for Select {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let proj: Vec<String> = self.projections.iter().map(|p| p.to_string()).collect();
        write!(f, "SELECT {} FROM {}", proj.join(", "), self.source)?;
        for j in &self.joins {
            write!(f, " JOIN {} ON {} = {}", j.source, j.left, j.right)?;
        }
        if !self.conditions.is_empty() {
            write!(f, " WHERE {}", Expr::And(self.conditions.clone()))?;
        }
        if !self.group_by.is_empty() {
            let g: Vec<String> = self.group_by.iter().map(|c| c.to_string()).collect();
            write!(f, " GROUP BY {}", g.join(", "))?;
        }
        if !self.order_by.is_empty() {
            let o: Vec<String> =
                self.order_by.iter().map(|o| format!("{}{}", o.key, if o.desc { " DESC" } else { "" })).collect();
            write!(f, " ORDER BY {}", o.join(", "))?;
        }
        if let Some(l) = self.limit {
            write!(f, " LIMIT {l}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Statement {
    pub with: Vec<(String, Select)>,
    /// `CREATE TEMP name AS …` keeps the result for later statements.
    pub create: Option<String>,
    pub select: Select,
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(name) = &self.create {
            write!(f, "CREATE TEMP {name} AS ")?;
        }
        if !self.with.is_empty() {
            let w: Vec<String> = self.with.iter().map(|(n, s)| format!("{n} AS ({s})")).collect();
            write!(f, "WITH {} ", w.join(", "))?;
        }
        write!(f, "{}", self.select)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Script {
    pub statements: Vec<Statement>,
}

impl fmt::Display for Script {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: Vec<String> = self.statements.iter().map(|s| s.to_string()).collect();
        f.write_str(&s.join(";\n"))
    }
}
