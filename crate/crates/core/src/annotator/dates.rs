//! Built-in date grammar: ten fixed formats normalized to ISO-8601.
//!
//! | # | format          | example           |
//! |---|-----------------|-------------------|
//! | 1 | `YYYY-MM-DD`    | 2004-03-03        |
//! | 2 | `YYYY/MM/DD`    | 2004/03/03        |
//! | 3 | `YYYY.MM.DD`    | 2004.03.03        |
//! | 4 | `DD/MM/YYYY`    | 03/03/2004        |
//! | 5 | `DD-MM-YYYY`    | 03-03-2004        |
//! | 6 | `DD.MM.YYYY`    | 03.03.2004        |
//! | 7 | `D Month YYYY`  | 3rd March 2004    |
//! | 8 | `D Mon YYYY`    | 3 Mar 2004        |
//! | 9 | `Month D, YYYY` | March 3, 2004     |
//! |10 | `Mon D, YYYY`   | Mar 3 2004        |
//!
//! Numeric day/month orders (4–6) are read day-first unless `day_first` is
//! off.

use std::sync::OnceLock;

use chrono::NaiveDate;
use regex::Regex;

const MONTHS: [&str; 12] = [
    "january", "february", "march", "april", "may", "june", "july", "august", "september",
    "october", "november", "december",
];

fn month_number(name: &str) -> Option<u32> {
    let n = name.to_lowercase();
    let n = n.trim_end_matches('.');
    if n == "sept" {
        return Some(9);
    }
    MONTHS.iter().position(|m| *m == n || (n.len() == 3 && m.starts_with(n))).map(|i| i as u32 + 1)
}

#[derive(Clone, Copy)]
enum Shape {
    YearFirst,
    DayOrMonthFirst,
    DayMonthName,
    MonthNameDay,
}

struct Format {
    re: Regex,
    shape: Shape,
}

const FULL: &str = "january|february|march|april|may|june|july|august|september|october|november|december";
const ABBR: &str = r"jan|feb|mar|apr|jun|jul|aug|sept|sep|oct|nov|dec";

fn formats() -> &'static [Format] {
    static F: OnceLock<Vec<Format>> = OnceLock::new();
    F.get_or_init(|| {
        let mk = |p: &str, shape| Format { re: Regex::new(p).unwrap(), shape };
        vec![
            mk(r"\b(\d{4})-(\d{1,2})-(\d{1,2})\b", Shape::YearFirst),
            mk(r"\b(\d{4})/(\d{1,2})/(\d{1,2})\b", Shape::YearFirst),
            mk(r"\b(\d{4})\.(\d{1,2})\.(\d{1,2})\b", Shape::YearFirst),
            mk(r"\b(\d{1,2})/(\d{1,2})/(\d{4})\b", Shape::DayOrMonthFirst),
            mk(r"\b(\d{1,2})-(\d{1,2})-(\d{4})\b", Shape::DayOrMonthFirst),
            mk(r"\b(\d{1,2})\.(\d{1,2})\.(\d{4})\b", Shape::DayOrMonthFirst),
            mk(&format!(r"(?i)\b(\d{{1,2}})(?:st|nd|rd|th)?\s+({FULL})\s+(\d{{4}})\b"), Shape::DayMonthName),
            mk(&format!(r"(?i)\b(\d{{1,2}})(?:st|nd|rd|th)?\s+({ABBR})\.?\s+(\d{{4}})\b"), Shape::DayMonthName),
            mk(&format!(r"(?i)\b({FULL})\s+(\d{{1,2}})(?:st|nd|rd|th)?,?\s+(\d{{4}})\b"), Shape::MonthNameDay),
            mk(&format!(r"(?i)\b({ABBR})\.?\s+(\d{{1,2}})(?:st|nd|rd|th)?,?\s+(\d{{4}})\b"), Shape::MonthNameDay),
        ]
    })
}

fn to_iso(shape: Shape, caps: &regex::Captures<'_>, day_first: bool) -> Option<String> {
    let num = |i: usize| caps[i].parse::<u32>().ok();
    let (y, m, d) = match shape {
        Shape::YearFirst => (num(1)? as i32, num(2)?, num(3)?),
        Shape::DayOrMonthFirst => {
            let (a, b) = (num(1)?, num(2)?);
            let (d, m) = if day_first { (a, b) } else { (b, a) };
            (num(3)? as i32, m, d)
        }
        Shape::DayMonthName => (num(3)? as i32, month_number(&caps[2])?, num(1)?),
        Shape::MonthNameDay => (num(3)? as i32, month_number(&caps[1])?, num(2)?),
    };
    NaiveDate::from_ymd_opt(y, m, d).map(|dt| dt.format("%Y-%m-%d").to_string())
}

/// A date found in text: byte range and ISO rendering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DateMatch {
    pub start: usize,
    pub end: usize,
    pub iso: String,
}

/// All valid dates in `text`, leftmost-longest, non-overlapping, in order.
pub fn scan_dates(text: &str, day_first: bool) -> Vec<DateMatch> {
    let mut found: Vec<DateMatch> = Vec::new();
    for f in formats() {
        for caps in f.re.captures_iter(text) {
            let m = caps.get(0).unwrap();
            if let Some(iso) = to_iso(f.shape, &caps, day_first) {
                found.push(DateMatch { start: m.start(), end: m.end(), iso });
            }
        }
    }
    found.sort_by(|a, b| a.start.cmp(&b.start).then(b.end.cmp(&a.end)));
    let mut out: Vec<DateMatch> = Vec::new();
    for m in found {
        if out.last().map_or(true, |last| m.start >= last.end) {
            out.push(m);
        }
    }
    out
}

/// Parse a string that is exactly one date (surrounding whitespace and
/// trailing punctuation ignored).
pub fn parse_date(s: &str, day_first: bool) -> Option<String> {
    let t = s.trim().trim_end_matches(['.', ',', ';']);
    let ms = scan_dates(t, day_first);
    match ms.as_slice() {
        [m] if m.start == 0 && m.end == t.len() => Some(m.iso.clone()),
        _ => None,
    }
}
