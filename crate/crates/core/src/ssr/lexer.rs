//! Tokens of the query dialect, with 1-based line/column positions.

use super::SsrError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Str(String),
    Num(f64),
    Comma,
    Dot,
    LParen,
    RParen,
    Semi,
    Star,
    Minus,
    Op(&'static str),
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Str(s) => format!("'{s}'"),
            Tok::Num(n) => format!("{n}"),
            Tok::Comma => "`,`".into(),
            Tok::Dot => "`.`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Star => "`*`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Op(o) => format!("`{o}`"),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

pub fn lex(src: &str) -> Result<Vec<Token>, SsrError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let err = |line, col, expected: &str, found: String| SsrError::Syntax { line, col, expected: expected.into(), found };
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        let advance = |i: &mut usize, n: usize, line: &mut usize, col: &mut usize| {
            for k in 0..n {
                if chars[*i + k] == '\n' {
                    *line += 1;
                    *col = 1;
                } else {
                    *col += 1;
                }
            }
            *i += n;
        };
        if c.is_whitespace() {
            advance(&mut i, 1, &mut line, &mut col);
            continue;
        }
        if c == '-' && chars.get(i + 1) == Some(&'-') {
            let mut n = 0;
            while i + n < chars.len() && chars[i + n] != '\n' {
                n += 1;
            }
            advance(&mut i, n, &mut line, &mut col);
            continue;
        }
        let push = |out: &mut Vec<Token>, tok| out.push(Token { tok, line: l0, col: c0 });
        if c.is_alphabetic() || c == '_' {
            let mut n = 0;
            while i + n < chars.len() && (chars[i + n].is_alphanumeric() || chars[i + n] == '_') {
                n += 1;
            }
            push(&mut out, Tok::Ident(chars[i..i + n].iter().collect()));
            advance(&mut i, n, &mut line, &mut col);
        } else if c.is_ascii_digit() {
            let mut n = 0;
            let mut dot = false;
            while i + n < chars.len()
                && (chars[i + n].is_ascii_digit()
                    || (!dot && chars[i + n] == '.' && chars.get(i + n + 1).is_some_and(|d| d.is_ascii_digit())))
            {
                dot |= chars[i + n] == '.';
                n += 1;
            }
            let text: String = chars[i..i + n].iter().collect();
            push(&mut out, Tok::Num(text.parse().map_err(|_| err(l0, c0, "number", text.clone()))?));
            advance(&mut i, n, &mut line, &mut col);
        } else if c == '\'' {
            let mut s = String::new();
            let mut n = 1;
            loop {
                match chars.get(i + n) {
                    None => return Err(err(l0, c0, "closing `'`", "end of input".into())),
                    Some('\'') if chars.get(i + n + 1) == Some(&'\'') => {
                        s.push('\'');
                        n += 2;
                    }
                    Some('\'') => {
                        n += 1;
                        break;
                    }
                    Some(&ch) => {
                        s.push(ch);
                        n += 1;
                    }
                }
            }
            push(&mut out, Tok::Str(s));
            advance(&mut i, n, &mut line, &mut col);
        } else {
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            let (tok, n) = match two.as_str() {
                "!=" => (Tok::Op("!="), 2),
                "<>" => (Tok::Op("!="), 2),
                "<=" => (Tok::Op("<="), 2),
                ">=" => (Tok::Op(">="), 2),
                _ => match c {
                    '=' => (Tok::Op("="), 1),
                    '<' => (Tok::Op("<"), 1),
                    '>' => (Tok::Op(">"), 1),
                    ',' => (Tok::Comma, 1),
                    '.' => (Tok::Dot, 1),
                    '(' => (Tok::LParen, 1),
                    ')' => (Tok::RParen, 1),
                    ';' => (Tok::Semi, 1),
                    '*' => (Tok::Star, 1),
                    '-' => (Tok::Minus, 1),
                    other => return Err(err(l0, c0, "a token", format!("`{other}`"))),
                },
            };
            push(&mut out, tok);
            advance(&mut i, n, &mut line, &mut col);
        }
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}
