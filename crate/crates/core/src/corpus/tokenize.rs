//! The one tokenizer used everywhere: corpus statistics, postings, EXTRACT
//! `near` windows and the NL binder all go through here.

/// A token with its byte range in the original text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Lowercase and split on whitespace and punctuation. A run of digits with
/// single `.` or `,` separators between digits (`12,500.75`) stays one token.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_spans(text).into_iter().map(|t| t.text).collect()
}

pub fn token_count(text: &str) -> usize {
    tokenize_spans(text).len()
}

pub fn tokenize_spans(text: &str) -> Vec<Token> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (start, c) = chars[i];
        if !c.is_alphanumeric() {
            i += 1;
            continue;
        }
        let mut buf = String::new();
        let mut numeric = true;
        let mut j = i;
        while j < chars.len() {
            let (_, ch) = chars[j];
            if ch.is_alphanumeric() {
                numeric &= ch.is_ascii_digit();
                buf.extend(ch.to_lowercase());
                j += 1;
            } else if (ch == '.' || ch == ',')
                && numeric
                && !buf.is_empty()
                && j + 1 < chars.len()
                && chars[j + 1].1.is_ascii_digit()
            {
                buf.push(ch);
                j += 1;
            } else {
                break;
            }
        }
        let end = chars.get(j).map_or(text.len(), |&(b, _)| b);
        out.push(Token { text: buf, start, end });
        i = j;
    }
    out
}
