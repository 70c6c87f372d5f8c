//! Numeric and currency amounts, normalized to plain decimal strings.

use std::sync::OnceLock;

use regex::Regex;

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?:[$€£]\s?)?-?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?").unwrap()
    })
}

fn exact_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^(?:(?:usd|aud|eur|gbp)\s*)?(?:[$€£]\s?)?(-?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?)(?:\s*(?:usd|aud|eur|gbp))?$")
            .unwrap()
    })
}

/// Canonical decimal: no separators, no leading `+`, no trailing fractional
/// zeros, `-0` folded to `0`.
pub fn canonical_decimal(digits: &str) -> String {
    let s: String = digits.chars().filter(|&c| c != ',').collect();
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest.to_string()),
        None => (false, s),
    };
    let (int, frac) = match body.split_once('.') {
        Some((i, f)) => (i.to_string(), f.trim_end_matches('0').to_string()),
        None => (body, String::new()),
    };
    let int = int.trim_start_matches('0');
    let int = if int.is_empty() { "0" } else { int };
    let mut out = String::new();
    if neg && !(int == "0" && frac.is_empty()) {
        out.push('-');
    }
    out.push_str(int);
    if !frac.is_empty() {
        out.push('.');
        out.push_str(&frac);
    }
    out
}

/// Parse a string that is exactly one number, optionally with a currency
/// symbol or code.
pub fn parse_number(s: &str) -> Option<String> {
    let t = s.trim().trim_end_matches(['.', ',', ';']).to_lowercase();
    exact_re().captures(&t).map(|c| canonical_decimal(&c[1]))
}

/// Every number in `text`, in order.
pub fn scan_numbers(text: &str) -> Vec<(usize, usize, String)> {
    number_re()
        .find_iter(text)
        .filter_map(|m| {
            let digits: String =
                m.as_str().chars().filter(|c| c.is_ascii_digit() || matches!(c, '.' | ',' | '-')).collect();
            let digits = digits.trim_start_matches(|c| c != '-' && !char::is_ascii_digit(&c));
            (!digits.is_empty()).then(|| (m.start(), m.end(), canonical_decimal(digits)))
        })
        .collect()
}

pub fn has_currency(text: &str) -> bool {
    text.contains(['$', '€', '£'])
}
