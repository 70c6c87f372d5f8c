use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    KeyedPattern,
    Regex,
    Dictionary,
    Date,
    Number,
    External,
}

impl ExtractorKind {
    pub fn captures(self) -> bool {
        matches!(self, ExtractorKind::KeyedPattern | ExtractorKind::Regex)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Normalization {
    #[serde(default = "yes")]
    pub lowercase: bool,
    #[serde(default = "yes")]
    pub trim: bool,
    #[serde(default = "yes")]
    pub collapse_whitespace: bool,
}

fn yes() -> bool {
    true
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization { lowercase: true, trim: true, collapse_whitespace: true }
    }
}

impl Normalization {
    pub fn apply(&self, raw: &str) -> String {
        let mut s = if self.collapse_whitespace {
            raw.split_whitespace().collect::<Vec<_>>().join(" ")
        } else {
            raw.to_string()
        };
        if self.trim {
            s = s.trim().to_string();
        }
        if self.lowercase {
            s = s.to_lowercase();
        }
        s
    }
}

/// How a field is populated from raw text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub kind: ExtractorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<Vec<String>>,
    #[serde(default)]
    pub normalization: Normalization,
}

/// Value part of a keyed `Label: value` pattern. Stops at a newline, `;`,
/// or a `.` that is not followed by a digit.
pub const KEYED_VALUE: &str = r"((?:[^.\n;]|\.\d)+)";

impl ExtractorConfig {
    pub fn of_kind(kind: ExtractorKind) -> Self {
        ExtractorConfig { kind, pattern: None, vocabulary: None, normalization: Normalization::default() }
    }

    pub fn regex(pattern: impl Into<String>) -> Self {
        ExtractorConfig { pattern: Some(pattern.into()), ..Self::of_kind(ExtractorKind::Regex) }
    }

    /// `Label: value` or `Label - value`, label matched as a whole phrase.
    pub fn keyed(label: &str) -> Self {
        let words: Vec<String> = label.split_whitespace().map(regex::escape).collect();
        let pattern = format!(r"\b{}[ \t]*(?::|[ \t]-[ \t])[ \t]*{KEYED_VALUE}", words.join(r"[ \t]+"));
        ExtractorConfig { pattern: Some(pattern), ..Self::of_kind(ExtractorKind::KeyedPattern) }
    }

    pub fn dictionary(vocabulary: Vec<String>) -> Self {
        ExtractorConfig { vocabulary: Some(vocabulary), ..Self::of_kind(ExtractorKind::Dictionary) }
    }

    /// Check the structural invariants: capturing kinds carry a pattern that
    /// compiles with exactly one capture group, dictionaries carry terms.
    pub fn check(&self) -> Result<(), String> {
        if self.kind.captures() {
            let p = self.pattern.as_deref().ok_or("missing pattern")?;
            let re = regex::Regex::new(p).map_err(|e| e.to_string())?;
            let groups = re.captures_len() - 1;
            if groups != 1 {
                return Err(format!("pattern must have exactly one capture group, found {groups}"));
            }
        }
        if self.kind == ExtractorKind::Dictionary
            && self.vocabulary.as_ref().map_or(true, |v| v.is_empty())
        {
            return Err("dictionary extractor without vocabulary".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyed_pattern_has_one_group() {
        let c = ExtractorConfig::keyed("Doc Type");
        c.check().unwrap();
        let re = regex::RegexBuilder::new(c.pattern.as_deref().unwrap())
            .case_insensitive(true)
            .build()
            .unwrap();
        let caps = re.captures("Intro. doc type - Case Report. Rest").unwrap();
        assert_eq!(&caps[1], "Case Report");
    }

    #[test]
    fn check_rejects_bad_patterns() {
        assert!(ExtractorConfig::regex("(a)(b)").check().is_err());
        assert!(ExtractorConfig::regex("no groups").check().is_err());
        assert!(ExtractorConfig::regex("(unclosed").check().is_err());
        assert!(ExtractorConfig::dictionary(vec![]).check().is_err());
        assert!(ExtractorConfig::of_kind(ExtractorKind::Date).check().is_ok());
    }

    #[test]
    fn normalization_flags() {
        let n = Normalization::default();
        assert_eq!(n.apply("  High   Court  "), "high court");
        let keep = Normalization { lowercase: false, trim: true, collapse_whitespace: false };
        assert_eq!(keep.apply(" A  b "), "A  b");
    }
}
