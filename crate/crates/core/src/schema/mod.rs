//! The annotation schema: typed fields, their tier, and the group hierarchy
//! that organizes them.
//!
//! The first level under the root holds one group per tier (`fast`, `sem`,
//! `detail`); deeper grouping nests below a tier. Depth counts group levels
//! on the longest root-to-leaf path, so a root holding leaves directly has
//! depth 1 and the usual tiered layout has depth 2.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotator::ExtractorConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueType {
    String,
    Number,
    Date,
    Categorical,
    StringSet,
}

impl ValueType {
    pub fn as_str(self) -> &'static str {
        match self {
            ValueType::String => "string",
            ValueType::Number => "number",
            ValueType::Date => "date",
            ValueType::Categorical => "categorical",
            ValueType::StringSet => "string_set",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "string" => ValueType::String,
            "number" => ValueType::Number,
            "date" => ValueType::Date,
            "categorical" => ValueType::Categorical,
            "string_set" => ValueType::StringSet,
            _ => return None,
        })
    }

    /// Types the relational fast table can hold.
    pub fn fast_eligible(self) -> bool {
        matches!(self, ValueType::Categorical | ValueType::Date | ValueType::Number)
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Fast,
    Sem,
    Detail,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Fast, Tier::Sem, Tier::Detail];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Fast => "fast",
            Tier::Sem => "sem",
            Tier::Detail => "detail",
        }
    }

    pub fn from_group_name(s: &str) -> Option<Self> {
        Tier::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Lite,
    Std,
    Full,
    Evolved,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(rename = "type")]
    pub value_type: ValueType,
    pub tier: Tier,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hint: Option<ExtractorConfig>,
    /// Closed vocabulary for categorical fields; values outside it are kept
    /// but flagged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<Vec<String>>,
}

impl FieldSpec {
    pub fn new(name: &str, value_type: ValueType, tier: Tier) -> Self {
        FieldSpec {
            name: name.to_string(),
            description: String::new(),
            value_type,
            tier,
            hint: None,
            vocabulary: None,
        }
    }

    pub fn with_description(mut self, d: &str) -> Self {
        self.description = d.to_string();
        self
    }

    pub fn with_hint(mut self, hint: ExtractorConfig) -> Self {
        self.hint = Some(hint);
        self
    }

    /// Text embedded when matching fields against queries or gold attributes.
    pub fn signature(&self) -> String {
        format!("{} {}", self.name.replace('_', " "), self.description)
    }
}

pub fn valid_field_name(name: &str) -> bool {
    let b = name.as_bytes();
    !b.is_empty()
        && b.len() <= 64
        && b[0].is_ascii_lowercase()
        && b.iter().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || *c == b'_')
}

/// A node of the hierarchy: a field leaf (serialized as a bare string) or a
/// named group.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Field(String),
    Group(Group),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Group {
    pub name: String,
    #[serde(default)]
    pub children: Vec<Node>,
}

impl Group {
    pub fn new(name: &str, children: Vec<Node>) -> Self {
        Group { name: name.to_string(), children }
    }

    fn depth(&self) -> usize {
        1 + self
            .children
            .iter()
            .filter_map(|c| match c {
                Node::Group(g) => Some(g.depth()),
                Node::Field(_) => None,
            })
            .max()
            .unwrap_or(0)
    }

    fn branching(&self) -> usize {
        self.children
            .iter()
            .filter_map(|c| match c {
                Node::Group(g) => Some(g.branching()),
                Node::Field(_) => None,
            })
            .fold(self.children.len(), usize::max)
    }

    fn visit_leaves<'a>(&'a self, top: Option<&'a str>, out: &mut Vec<(&'a str, Option<&'a str>)>) {
        for c in &self.children {
            match c {
                Node::Field(f) => out.push((f, top)),
                Node::Group(g) => g.visit_leaves(Some(top.unwrap_or(&g.name)), out),
            }
        }
    }

    fn canonicalize(&mut self) {
        for c in &mut self.children {
            if let Node::Group(g) = c {
                g.canonicalize();
            }
        }
        self.children.sort_by(|a, b| sort_key(a).cmp(&sort_key(b)));
    }
}

fn sort_key(n: &Node) -> (u8, u8, &str) {
    match n {
        Node::Group(g) => {
            let rank = Tier::from_group_name(&g.name).map_or(3, |t| t as u8);
            (0, rank, g.name.as_str())
        }
        Node::Field(f) => (1, 0, f.as_str()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Hierarchy {
    pub root: Group,
}

impl Hierarchy {
    /// Root → one group per non-empty tier → leaves. A tier holding more than
    /// `max_branching` fields gets split into numbered subgroups.
    pub fn tiered(fields: &[FieldSpec], max_branching: usize) -> Self {
        let assignment: Vec<usize> = vec![0; fields.len()];
        Self::grouped(fields, &assignment, max_branching)
    }

    /// Like [`Hierarchy::tiered`], but field `i` goes to subgroup
    /// `groups[i]` of its tier (0 = directly under the tier group).
    pub fn grouped(fields: &[FieldSpec], groups: &[usize], max_branching: usize) -> Self {
        let max_branching = max_branching.max(2);
        let mut tiers = Vec::new();
        for tier in Tier::ALL {
            let mut buckets: BTreeMap<usize, Vec<String>> = BTreeMap::new();
            for (f, &g) in fields.iter().zip(groups) {
                if f.tier == tier {
                    buckets.entry(g).or_default().push(f.name.clone());
                }
            }
            if buckets.is_empty() {
                continue;
            }
            let mut direct = buckets.remove(&0).unwrap_or_default();
            direct.sort();
            let mut children: Vec<Node> = Vec::new();
            let explicit: Vec<Vec<String>> = buckets.into_values().collect();
            // overflow of the tier group's own leaves moves into chunks
            let room = max_branching.saturating_sub(explicit.len());
            let mut chunks: Vec<Vec<String>> = Vec::new();
            if direct.len() > room {
                for chunk in direct.chunks(max_branching) {
                    chunks.push(chunk.to_vec());
                }
                direct.clear();
            }
            for (i, mut names) in explicit.into_iter().chain(chunks).enumerate() {
                names.sort();
                children.push(Node::Group(Group::new(
                    &format!("{}_{}", tier.as_str(), i + 1),
                    names.into_iter().map(Node::Field).collect(),
                )));
            }
            children.extend(direct.into_iter().map(Node::Field));
            tiers.push(Node::Group(Group::new(tier.as_str(), children)));
        }
        let mut h = Hierarchy { root: Group::new("root", tiers) };
        h.root.canonicalize();
        h
    }

    pub fn flat(names: &[&str]) -> Self {
        Hierarchy {
            root: Group::new("root", names.iter().map(|n| Node::Field(n.to_string())).collect()),
        }
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn branching_factor(&self) -> usize {
        self.root.branching()
    }

    /// Every leaf with the name of its top-level group (None for leaves
    /// directly under the root).
    pub fn leaves(&self) -> Vec<(&str, Option<&str>)> {
        let mut out = Vec::new();
        self.root.visit_leaves(None, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Schema {
    pub schema_id: String,
    pub granularity: Granularity,
    pub fields: Vec<FieldSpec>,
    pub hierarchy: Hierarchy,
}

impl Schema {
    /// Assemble a schema with the default tiered hierarchy.
    pub fn tiered(schema_id: &str, granularity: Granularity, fields: Vec<FieldSpec>) -> Self {
        let hierarchy = Hierarchy::tiered(&fields, FeasibilityLimits::default().max_branching);
        let mut s = Schema { schema_id: schema_id.to_string(), granularity, fields, hierarchy };
        s.canonicalize();
        s
    }

    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn fields_in(&self, tier: Tier) -> impl Iterator<Item = &FieldSpec> {
        self.fields.iter().filter(move |f| f.tier == tier)
    }

    pub fn field_names(&self) -> BTreeSet<&str> {
        self.fields.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn canonicalize(&mut self) {
        self.fields.sort_by(|a, b| a.name.cmp(&b.name));
        self.hierarchy.root.canonicalize();
    }

    pub fn canonical(&self) -> Schema {
        let mut s = self.clone();
        s.canonicalize();
        s
    }

    pub fn to_canonical_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(&self.canonical()).expect("schema serializes");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Schema, SchemaParseError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut s: Schema = serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = json_pointer(&e.path().to_string());
            SchemaParseError { pointer, message: e.into_inner().to_string() }
        })?;
        s.canonicalize();
        Ok(s)
    }
}

/// `fields[2].tier` → `/fields/2/tier`.
fn json_pointer(path: &str) -> String {
    if path == "." {
        return String::new();
    }
    let mut out = String::new();
    for seg in path.split('.') {
        let mut rest = seg;
        while !rest.is_empty() {
            if let Some(open) = rest.find('[') {
                if open > 0 {
                    out.push('/');
                    out.push_str(&rest[..open]);
                }
                let close = rest[open..].find(']').map_or(rest.len(), |c| open + c);
                out.push('/');
                out.push_str(&rest[open + 1..close]);
                rest = &rest[(close + 1).min(rest.len())..];
            } else {
                out.push('/');
                out.push_str(rest);
                rest = "";
            }
        }
    }
    out
}

#[derive(Debug, Error, PartialEq)]
#[error("schema parse error at {pointer}: {message}")]
pub struct SchemaParseError {
    pub pointer: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeasibilityLimits {
    pub max_depth: usize,
    pub max_branching: usize,
    pub t_max_seconds: f64,
    pub storage_ratio_rho: f64,
}

impl Default for FeasibilityLimits {
    fn default() -> Self {
        FeasibilityLimits { max_depth: 4, max_branching: 8, t_max_seconds: 120.0, storage_ratio_rho: 0.3 }
    }
}

impl FeasibilityLimits {
    pub fn is_valid(&self) -> bool {
        self.max_depth > 0
            && self.max_branching > 0
            && self.t_max_seconds > 0.0
            && self.storage_ratio_rho > 0.0
            && self.storage_ratio_rho <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub code: &'static str,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, code: &str) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }

    fn push(&mut self, code: &'static str, detail: String) {
        self.violations.push(Violation { code, detail });
    }
}

/// Report every structural problem with a schema.
pub fn validate_schema(schema: &Schema) -> ValidationReport {
    let mut r = ValidationReport::default();
    if schema.fields.is_empty() {
        r.push("no_fields", "schema declares no fields".into());
    }
    let mut names: BTreeMap<&str, &FieldSpec> = BTreeMap::new();
    for f in &schema.fields {
        if !valid_field_name(&f.name) {
            r.push("invalid_field_name", f.name.clone());
        }
        if names.insert(&f.name, f).is_some() {
            r.push("duplicate_field_name", f.name.clone());
        }
        if f.tier == Tier::Fast && !f.value_type.fast_eligible() {
            r.push("fast_tier_type", format!("{} has type {}", f.name, f.value_type));
        }
        if let Some(h) = &f.hint {
            if let Err(e) = h.check() {
                r.push("invalid_hint", format!("{}: {e}", f.name));
            }
        }
    }
    if !schema.fields.is_empty() && !schema.fields.iter().any(|f| f.tier == Tier::Fast) {
        r.push("no_fast_tier", "at least one fast-tier field is required".into());
    }
    let mut placed: BTreeMap<&str, usize> = BTreeMap::new();
    for (leaf, top) in schema.hierarchy.leaves() {
        *placed.entry(leaf).or_default() += 1;
        match names.get(leaf) {
            None => r.push("unknown_field_in_hierarchy", leaf.to_string()),
            Some(f) => {
                if let Some(tier) = top.and_then(Tier::from_group_name) {
                    if tier != f.tier {
                        r.push(
                            "tier_group_mismatch",
                            format!("{leaf} is {} but sits under {}", f.tier, tier),
                        );
                    }
                }
            }
        }
    }
    for (leaf, count) in &placed {
        if *count > 1 {
            r.push("field_in_multiple_groups", leaf.to_string());
        }
    }
    for name in names.keys() {
        if !placed.contains_key(name) {
            r.push("field_not_in_hierarchy", name.to_string());
        }
    }
    r
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Feasibility {
    pub feasible: bool,
    pub depth: usize,
    pub branching: usize,
    pub reasons: Vec<&'static str>,
}

/// Depth and branching bounds. Time and storage are checked by schema
/// induction against measured estimates.
pub fn structural_feasible(schema: &Schema, limits: &FeasibilityLimits) -> Feasibility {
    let depth = schema.hierarchy.depth();
    let branching = schema.hierarchy.branching_factor();
    let mut reasons = Vec::new();
    if depth > limits.max_depth {
        reasons.push("depth_exceeded");
    }
    if branching > limits.max_branching {
        reasons.push("branching_exceeded");
    }
    Feasibility { feasible: reasons.is_empty(), depth, branching, reasons }
}
