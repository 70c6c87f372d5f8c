//! Recursive-descent parser for the query dialect.
//!
//! ```text
//! script    := statement (";" statement)* [";"]
//! statement := ["CREATE" "TEMP" ["TABLE"] name "AS"] [with] select
//! with      := "WITH" name "AS" "(" select ")" ("," name "AS" "(" select ")")*
//! select    := "SELECT" proj ("," proj)* "FROM" source join*
//!              ["WHERE" or] ["GROUP" "BY" col ("," col)*]
//!              ["ORDER" "BY" item ("," item)*] ["LIMIT" int]
//! join      := "JOIN" source "ON" col "=" col
//! or        := and ("OR" and)*
//! and       := pred ("AND" pred)*
//! pred      := "(" or ")" | "EXTRACT" "(" col "," string ")"
//!            | col op literal | col "IN" "(" literal ("," literal)* ")"
//!            | col "CONTAINS" string
//! ```
//!
//! Keywords are case-insensitive and reserved. A comparison on an
//! `EXTRACT` alias at the top level of WHERE becomes part of that
//! extract's `value_cmp`.

use super::ast::*;
use super::lexer::{lex, Tok, Token};
use super::SsrError;
use crate::value::{CompareOp, Literal};

const KEYWORDS: &[&str] = &[
    "select", "from", "where", "and", "or", "join", "on", "group", "by", "order", "limit", "as", "with", "extract",
    "in", "contains", "asc", "desc", "create", "temp", "table", "inner",
];

pub fn parse_script(text: &str) -> Result<Script, SsrError> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    let mut statements = Vec::new();
    loop {
        while p.eat(&Tok::Semi) {}
        if p.peek() == &Tok::Eof {
            break;
        }
        statements.push(p.statement()?);
        if p.peek() != &Tok::Eof {
            p.expect(&Tok::Semi, "`;` or end of input")?;
        }
    }
    if statements.is_empty() {
        return Err(p.error("SELECT"));
    }
    Ok(Script { statements })
}

/// Parse exactly one statement.
pub fn parse_query(text: &str) -> Result<Statement, SsrError> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    let st = p.statement()?;
    while p.eat(&Tok::Semi) {}
    if p.peek() != &Tok::Eof {
        return Err(p.error("end of input"));
    }
    Ok(st)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &str) -> SsrError {
        let t = &self.toks[self.pos];
        SsrError::Syntax { line: t.line, col: t.col, expected: expected.to_string(), found: t.tok.describe() }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), SsrError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.error(&kw.to_uppercase()))
        }
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == t {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, t: &Tok, what: &str) -> Result<(), SsrError> {
        if self.eat(t) {
            Ok(())
        } else {
            Err(self.error(what))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, SsrError> {
        match self.peek() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.to_ascii_lowercase().as_str()) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => Err(self.error(what)),
        }
    }

    fn statement(&mut self) -> Result<Statement, SsrError> {
        let mut create = None;
        if self.eat_kw("create") {
            self.expect_kw("temp")?;
            self.eat_kw("table");
            create = Some(self.ident("temp table name")?);
            self.expect_kw("as")?;
        }
        let parens = create.is_some() && self.eat(&Tok::LParen);
        let mut with = Vec::new();
        if self.eat_kw("with") {
            loop {
                let name = self.ident("temp table name")?;
                self.expect_kw("as")?;
                self.expect(&Tok::LParen, "`(`")?;
                let sel = self.select()?;
                self.expect(&Tok::RParen, "`)`")?;
                with.push((name, sel));
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        let select = self.select()?;
        if parens {
            self.expect(&Tok::RParen, "`)`")?;
        }
        Ok(Statement { with, create, select })
    }

    fn select(&mut self) -> Result<Select, SsrError> {
        self.expect_kw("select")?;
        let mut projections = vec![self.projection()?];
        while self.eat(&Tok::Comma) {
            projections.push(self.projection()?);
        }
        self.expect_kw("from")?;
        let source = self.source()?;
        let mut joins = Vec::new();
        loop {
            if self.eat_kw("inner") {
                self.expect_kw("join")?;
            } else if !self.eat_kw("join") {
                break;
            }
            let src = self.source()?;
            self.expect_kw("on")?;
            let left = self.column()?;
            if self.peek() != &Tok::Op("=") {
                return Err(self.error("`=` (joins are equi-joins)"));
            }
            self.bump();
            let right = self.column()?;
            joins.push(Join { source: src, left, right });
        }
        let mut conditions = Vec::new();
        let where_pos = self.pos;
        if self.eat_kw("where") {
            conditions = match self.or_expr()? {
                Expr::And(xs) => xs,
                other => vec![other],
            };
        }
        let mut group_by = Vec::new();
        if self.eat_kw("group") {
            self.expect_kw("by")?;
            group_by.push(self.column()?);
            while self.eat(&Tok::Comma) {
                group_by.push(self.column()?);
            }
        }
        let mut order_by = Vec::new();
        if self.eat_kw("order") {
            self.expect_kw("by")?;
            loop {
                let key = self.projection_expr()?;
                let desc = if self.eat_kw("desc") {
                    true
                } else {
                    self.eat_kw("asc");
                    false
                };
                order_by.push(OrderItem { key, desc });
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        let mut limit = None;
        if self.eat_kw("limit") {
            match self.bump() {
                Tok::Num(n) if n >= 0.0 && n.fract() == 0.0 => limit = Some(n as usize),
                _ => {
                    self.pos -= 1;
                    return Err(self.error("non-negative integer"));
                }
            }
        }
        let conditions = fold_extract_comparisons(conditions).map_err(|msg| {
            let t = &self.toks[where_pos];
            SsrError::Semantic(format!("{msg} (WHERE at {}:{})", t.line, t.col))
        })?;
        Ok(Select { projections, source, joins, conditions, group_by, order_by, limit })
    }

    fn source(&mut self) -> Result<SourceRef, SsrError> {
        let name = self.ident("source name")?;
        let alias = if self.eat_kw("as") {
            Some(self.ident("alias")?)
        } else if matches!(self.peek(), Tok::Ident(s) if !KEYWORDS.contains(&s.to_ascii_lowercase().as_str())) {
            Some(self.ident("alias")?)
        } else {
            None
        };
        Ok(SourceRef { name, alias })
    }

    fn column(&mut self) -> Result<ColumnRef, SsrError> {
        let first = self.ident("column name")?;
        if self.eat(&Tok::Dot) {
            let name = self.ident("column name")?;
            Ok(ColumnRef { qualifier: Some(first), name })
        } else {
            Ok(ColumnRef { qualifier: None, name: first })
        }
    }

    fn projection(&mut self) -> Result<Projection, SsrError> {
        if self.eat(&Tok::Star) {
            return Ok(Projection::Star);
        }
        let mut p = self.projection_expr()?;
        if self.eat_kw("as") {
            let a = self.ident("alias")?;
            match &mut p {
                Projection::Column { alias, .. } | Projection::Aggregate { alias, .. } => *alias = Some(a),
                Projection::Star => unreachable!(),
            }
        }
        Ok(p)
    }

    fn projection_expr(&mut self) -> Result<Projection, SsrError> {
        if let (Tok::Ident(name), Tok::LParen) = (self.peek().clone(), self.peek_at(1)) {
            if let Some(func) = AggFunc::parse(&name) {
                self.bump();
                self.bump();
                let arg = if self.eat(&Tok::Star) {
                    if func != AggFunc::Count {
                        self.pos -= 1;
                        return Err(self.error("column name"));
                    }
                    None
                } else {
                    Some(self.column()?)
                };
                self.expect(&Tok::RParen, "`)`")?;
                return Ok(Projection::Aggregate { func, arg, alias: None });
            }
        }
        Ok(Projection::Column { col: self.column()?, alias: None })
    }

    fn or_expr(&mut self) -> Result<Expr, SsrError> {
        let mut xs = vec![self.and_expr()?];
        while self.eat_kw("or") {
            xs.push(self.and_expr()?);
        }
        Ok(if xs.len() == 1 { xs.pop().unwrap() } else { Expr::Or(flatten(xs, true)) })
    }

    fn and_expr(&mut self) -> Result<Expr, SsrError> {
        let mut xs = vec![self.predicate()?];
        while self.eat_kw("and") {
            xs.push(self.predicate()?);
        }
        Ok(if xs.len() == 1 { xs.pop().unwrap() } else { Expr::And(flatten(xs, false)) })
    }

    fn predicate(&mut self) -> Result<Expr, SsrError> {
        if self.eat(&Tok::LParen) {
            let e = self.or_expr()?;
            self.expect(&Tok::RParen, "`)`")?;
            return Ok(e);
        }
        if self.is_kw("extract") {
            self.bump();
            self.expect(&Tok::LParen, "`(`")?;
            let target = self.column()?;
            self.expect(&Tok::Comma, "`,`")?;
            let at = self.pos;
            let Tok::Str(text) = self.bump() else {
                self.pos = at;
                return Err(self.error("quoted condition"));
            };
            let cond = Cond::parse(&text).map_err(|detail| {
                let t = &self.toks[at];
                SsrError::Syntax { line: t.line, col: t.col, expected: "valid condition".into(), found: detail }
            })?;
            self.expect(&Tok::RParen, "`)`")?;
            return Ok(Expr::Extract(ExtractSpec {
                qualifier: target.qualifier,
                alias: target.name,
                cond,
                value_cmp: Vec::new(),
            }));
        }
        let col = self.column()?;
        if self.eat_kw("in") {
            self.expect(&Tok::LParen, "`(`")?;
            let mut values = vec![self.literal()?];
            while self.eat(&Tok::Comma) {
                values.push(self.literal()?);
            }
            self.expect(&Tok::RParen, "`)`")?;
            return Ok(Expr::In { col, values });
        }
        if self.eat_kw("contains") {
            return match self.bump() {
                Tok::Str(text) => Ok(Expr::Contains { col, text }),
                _ => {
                    self.pos -= 1;
                    Err(self.error("quoted text"))
                }
            };
        }
        let op = match self.peek() {
            Tok::Op(o) => match *o {
                "=" => CompareOp::Eq,
                "!=" => CompareOp::Ne,
                "<" => CompareOp::Lt,
                "<=" => CompareOp::Le,
                ">" => CompareOp::Gt,
                _ => CompareOp::Ge,
            },
            _ => return Err(self.error("comparison operator, IN or CONTAINS")),
        };
        self.bump();
        let value = self.literal()?;
        Ok(Expr::Compare { col, op, value })
    }

    fn literal(&mut self) -> Result<Literal, SsrError> {
        let neg = self.eat(&Tok::Minus);
        match self.peek().clone() {
            Tok::Num(n) => {
                self.bump();
                Ok(Literal::Num(if neg { -n } else { n }))
            }
            Tok::Str(s) if !neg => {
                self.bump();
                Ok(Literal::Str(s))
            }
            _ => Err(self.error("literal")),
        }
    }
}

fn flatten(xs: Vec<Expr>, or: bool) -> Vec<Expr> {
    let mut out = Vec::new();
    for x in xs {
        match x {
            Expr::Or(inner) if or => out.extend(inner),
            Expr::And(inner) if !or => out.extend(inner),
            other => out.push(other),
        }
    }
    out
}

fn collect_aliases<'a>(e: &'a Expr, out: &mut Vec<&'a ExtractSpec>) {
    match e {
        Expr::And(xs) | Expr::Or(xs) => xs.iter().for_each(|x| collect_aliases(x, out)),
        Expr::Extract(x) => out.push(x),
        _ => {}
    }
}

fn refers_to(col: &ColumnRef, spec: &ExtractSpec) -> bool {
    col.name == spec.alias && (col.qualifier.is_none() || col.qualifier == spec.qualifier)
}

fn mentions_alias(e: &Expr, specs: &[&ExtractSpec]) -> Option<String> {
    match e {
        Expr::And(xs) | Expr::Or(xs) => xs.iter().find_map(|x| mentions_alias(x, specs)),
        Expr::Compare { col, .. } | Expr::In { col, .. } | Expr::Contains { col, .. } => {
            specs.iter().any(|s| refers_to(col, s)).then(|| col.to_string())
        }
        Expr::Extract(_) => None,
    }
}

/// Move top-level `alias op literal` conjuncts into their extract spec.
fn fold_extract_comparisons(conds: Vec<Expr>) -> Result<Vec<Expr>, String> {
    let mut specs = Vec::new();
    conds.iter().for_each(|c| collect_aliases(c, &mut specs));
    let mut seen = std::collections::BTreeSet::new();
    for s in &specs {
        if !seen.insert(&s.alias) {
            return Err(format!("extract alias `{}` defined twice", s.alias));
        }
    }
    let mut folded: Vec<(usize, CompareOp, Literal)> = Vec::new();
    let top_specs: Vec<(usize, &ExtractSpec)> = conds
        .iter()
        .enumerate()
        .filter_map(|(i, c)| if let Expr::Extract(x) = c { Some((i, x)) } else { None })
        .collect();
    let mut keep = vec![true; conds.len()];
    for (i, c) in conds.iter().enumerate() {
        match c {
            Expr::Compare { col, op, value } if specs.iter().any(|s| refers_to(col, s)) => {
                let Some(&(target, _)) = top_specs.iter().find(|(_, s)| refers_to(col, s)) else {
                    return Err(format!("`{col}` is compared but its EXTRACT sits inside OR"));
                };
                folded.push((target, *op, value.clone()));
                keep[i] = false;
            }
            Expr::Extract(_) => {}
            other => {
                if let Some(name) = mentions_alias(other, &specs) {
                    return Err(format!(
                        "extract alias `{name}` may only be compared at the top level of WHERE, with an operator"
                    ));
                }
            }
        }
    }
    let mut out = Vec::new();
    for (i, mut c) in conds.into_iter().enumerate() {
        if !keep[i] {
            continue;
        }
        if let Expr::Extract(x) = &mut c {
            x.value_cmp.extend(folded.iter().filter(|(t, _, _)| *t == i).map(|(_, op, v)| (*op, v.clone())));
        }
        out.push(c);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoke_constraint() {
        let st = parse_query("SELECT doc_id FROM store WHERE doc_type = 'case_report'").unwrap();
        assert_eq!(st.select.schema_constraints().count(), 1);
        assert_eq!(st.select.extract_predicates().count(), 0);
        assert_eq!(st.select.source.name, "store");
    }

    #[test]
    fn extract_with_value_comparison() {
        let st = parse_query(r"SELECT doc_id FROM store WHERE EXTRACT(years, 'regex:(\d+)\s+years') AND years >= 5")
            .unwrap();
        let xs: Vec<&ExtractSpec> = st.select.extract_predicates().collect();
        assert_eq!(xs.len(), 1);
        assert_eq!(xs[0].alias, "years");
        assert_eq!(xs[0].cond.kind(), "regex");
        assert_eq!(xs[0].value_cmp, vec![(CompareOp::Ge, Literal::Num(5.0))]);
        assert_eq!(st.select.schema_constraints().count(), 0);
    }

    #[test]
    fn misspelled_keyword_points_at_start() {
        match parse_query("SELEC x") {
            Err(SsrError::Syntax { line: 1, col: 1, expected, .. }) => assert_eq!(expected, "SELECT"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn error_positions() {
        let e = parse_query("SELECT a\nFROM store WHERE a >").unwrap_err();
        assert!(matches!(e, SsrError::Syntax { line: 2, col: 21, .. }), "{e:?}");
        assert!(matches!(parse_query("SELECT a FROM store WHERE EXTRACT(x, 'regex:(a)(b)')"), Err(SsrError::Syntax { .. })));
        assert!(matches!(parse_query("SELECT a FROM store WHERE EXTRACT(x, 'near:a,b,0')"), Err(SsrError::Syntax { .. })));
        assert!(matches!(parse_query("SELECT SUM(*) FROM store"), Err(SsrError::Syntax { .. })));
    }

    #[test]
    fn or_precedence_and_roundtrip() {
        let q = "SELECT a.doc_id, COUNT(*) AS n FROM store AS a JOIN t b ON a.court = b.court \
                 WHERE a.x = 1 AND (a.y < 2 OR a.z IN ('p', 'q') AND a.w CONTAINS 'high court') \
                 GROUP BY a.doc_id ORDER BY n DESC, a.doc_id LIMIT 3";
        let st = parse_query(q).unwrap();
        assert_eq!(st.select.conditions.len(), 2);
        let Expr::Or(parts) = &st.select.conditions[1] else { panic!() };
        assert!(matches!(parts[1], Expr::And(_)));
        assert_eq!(st.select.limit, Some(3));
        assert!(st.select.order_by[0].desc);
        let again = parse_query(&st.to_string()).unwrap();
        assert_eq!(again, st);
    }

    #[test]
    fn alias_rules() {
        let e = parse_query("SELECT doc_id FROM s WHERE (EXTRACT(y, 'contains:x') OR a = 1) AND y > 2").unwrap_err();
        assert!(matches!(e, SsrError::Semantic(_)));
        let e = parse_query("SELECT doc_id FROM s WHERE EXTRACT(y, 'contains:x') AND EXTRACT(y, 'contains:z')");
        assert!(matches!(e, Err(SsrError::Semantic(_))));
        let st = parse_query("SELECT y FROM s WHERE y < 9 AND EXTRACT(y, 'regex:\\d+') AND y > 2").unwrap();
        assert_eq!(st.select.conditions.len(), 1);
        let x = st.select.extract_predicates().next().unwrap();
        assert_eq!(x.value_cmp.len(), 2);
    }

    #[test]
    fn scripts() {
        let s = parse_script(
            "CREATE TEMP winners AS SELECT doc_id, name FROM store WHERE award = 'x';\n\
             WITH w2 AS (SELECT name FROM winners) SELECT * FROM w2;",
        )
        .unwrap();
        assert_eq!(s.statements.len(), 2);
        assert_eq!(s.statements[0].create.as_deref(), Some("winners"));
        assert_eq!(s.statements[1].with[0].0, "w2");
        assert_eq!(parse_script(&s.to_string()).unwrap(), s);
        assert!(parse_script(" ; ").is_err());
        assert!(parse_query("SELECT a FROM s; SELECT b FROM s").is_err());
    }
}
