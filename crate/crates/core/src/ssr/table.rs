//! Query results: typed cells, CSV/JSON export, and comparison semantics
//! for values that no longer live in a store (temp tables, EXTRACT
//! captures, aggregates).

use std::cmp::Ordering;

use serde::ser::{SerializeMap, SerializeSeq};
use serde::{Serialize, Serializer};

use crate::annotator::{parse_date, parse_number};
use crate::corpus::tokenize;
use crate::schema::ValueType;
use crate::value::{any_matches, format_number, literal_key, normalize_text, CompareOp, Literal};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Null,
    Text(String),
    Number(f64),
    List(Vec<String>),
}

impl Cell {
    /// The values as stored strings; `Null` is the empty list.
    pub fn strings(&self) -> Vec<String> {
        match self {
            Cell::Null => Vec::new(),
            Cell::Text(s) => vec![s.clone()],
            Cell::Number(n) => vec![format_number(*n)],
            Cell::List(v) => v.clone(),
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Cell::Null)
    }

    /// Canonical text used for CSV, join keys and tuple comparison.
    pub fn render(&self) -> String {
        match self {
            Cell::Null => String::new(),
            Cell::Text(s) => s.clone(),
            Cell::Number(n) => format_number(*n),
            Cell::List(v) => v.join("|"),
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Cell::Null => 0,
            Cell::Number(_) => 1,
            Cell::Text(_) => 2,
            Cell::List(_) => 3,
        }
    }

    /// Total order used by ORDER BY, MIN and MAX: null first, then
    /// numbers, text, lists.
    pub fn total_cmp(&self, other: &Cell) -> Ordering {
        match (self, other) {
            (Cell::Number(a), Cell::Number(b)) => a.total_cmp(b),
            (Cell::Text(a), Cell::Text(b)) => a.cmp(b),
            (Cell::List(a), Cell::List(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }

    /// Typed value of a captured string: number, else ISO date, else
    /// normalized text.
    pub fn coerce(raw: &str) -> Cell {
        if let Some(n) = parse_number(raw).and_then(|d| d.parse::<f64>().ok()) {
            Cell::Number(n)
        } else if let Some(d) = parse_date(raw, true) {
            Cell::Text(d)
        } else {
            Cell::Text(normalize_text(raw))
        }
    }
}

impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Cell::Null => s.serialize_none(),
            Cell::Text(t) => s.serialize_str(t),
            Cell::Number(n) if n.fract() == 0.0 && n.abs() < 1e15 => s.serialize_i64(*n as i64),
            Cell::Number(n) => s.serialize_f64(*n),
            Cell::List(v) => {
                let mut seq = s.serialize_seq(Some(v.len()))?;
                for x in v {
                    seq.serialize_element(x)?;
                }
                seq.end()
            }
        }
    }
}

/// How a column's cells are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    /// Document identifiers, compared verbatim.
    DocId,
    /// Projected from a schema field of this type.
    Field(ValueType),
    /// Captured by EXTRACT, or computed by an aggregate.
    Dynamic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

/// A rectangular result. `provenance[i]` lists the documents row `i` was
/// built from; it is not exported but survives into temp tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Cell>>,
    pub provenance: Vec<Vec<String>>,
}

impl ResultTable {
    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows as rendered strings, for multiset comparison.
    pub fn tuples(&self) -> Vec<Vec<String>> {
        self.rows.iter().map(|r| r.iter().map(Cell::render).collect()).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(self.column_names()).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }

    /// `{"columns": [...], "rows": [{col: value, ...}, ...]}` with keys in
    /// column order.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result tables serialize")
    }
}

struct RowObj<'a>(&'a [Column], &'a [Cell]);

impl Serialize for RowObj<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for (c, v) in self.0.iter().zip(self.1) {
            m.serialize_entry(&c.name, v)?;
        }
        m.end()
    }
}

impl Serialize for ResultTable {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(2))?;
        m.serialize_entry("columns", &self.column_names())?;
        let rows: Vec<RowObj> = self.rows.iter().map(|r| RowObj(&self.columns, r)).collect();
        m.serialize_entry("rows", &rows)?;
        m.end()
    }
}

/// A literal prepared for comparison against cells of one column kind.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum CellTest {
    Id(CompareOp, String),
    Typed(ValueType, CompareOp, crate::value::Key),
    Dynamic(CompareOp, Literal),
}

impl CellTest {
    pub(crate) fn new(kind: ColumnKind, op: CompareOp, lit: &Literal) -> Result<CellTest, String> {
        Ok(match kind {
            ColumnKind::DocId => CellTest::Id(
                op,
                match lit {
                    Literal::Str(s) => s.clone(),
                    Literal::Num(n) => format_number(*n),
                },
            ),
            ColumnKind::Field(vt) => CellTest::Typed(vt, op, literal_key(vt, lit)?),
            ColumnKind::Dynamic => CellTest::Dynamic(op, lit.clone()),
        })
    }

    pub(crate) fn holds(&self, cell: &Cell) -> bool {
        match self {
            CellTest::Id(op, s) => cell.strings().iter().any(|v| op.holds(v.as_str().cmp(s))),
            CellTest::Typed(vt, op, key) => any_matches(*vt, &cell.strings(), *op, key),
            CellTest::Dynamic(op, lit) => dynamic_holds(cell, *op, lit),
        }
    }
}

/// Comparison for cells without a schema type. A numeric literal needs a
/// numeric cell, a date literal a date, anything else compares as
/// normalized text. A cell that cannot be read that way fails.
pub fn dynamic_holds(cell: &Cell, op: CompareOp, lit: &Literal) -> bool {
    match (cell, lit) {
        (Cell::Null, _) => false,
        (Cell::List(v), _) => v.iter().any(|x| dynamic_holds(&Cell::Text(x.clone()), op, lit)),
        (Cell::Number(n), Literal::Num(m)) => op.holds(n.total_cmp(m)),
        (Cell::Text(s), Literal::Num(m)) => parse_number(s)
            .and_then(|d| d.parse::<f64>().ok())
            .is_some_and(|n| op.holds(n.total_cmp(m))),
        (_, Literal::Str(l)) => match parse_date(l, true) {
            Some(ld) => match cell {
                Cell::Text(s) => parse_date(s, true).is_some_and(|sd| op.holds(sd.cmp(&ld))),
                _ => false,
            },
            None => op.holds(normalize_text(&cell.render()).cmp(&normalize_text(l))),
        },
    }
}

/// Token-phrase containment, shared by every CONTAINS evaluation.
pub(crate) fn phrase_in(values: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty()
        && values.iter().any(|v| {
            let toks = tokenize(v);
            toks.windows(phrase.len()).any(|w| w == phrase)
        })
}
