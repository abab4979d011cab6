//! ESG metadata registry.
//!
//! A registry describes one reporting standard: every indicator as an
//! `<Aspect, KPI, Topic, Quantity>` entity, its knowledge and search-term
//! extensions, and the prompt expressions used to question a model about it.
//! Registries are loaded from a JSON interchange file and validated in full
//! before use; after loading they are immutable.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Answer schema id understood by the agent module (the 7-field record).
pub const RECORD_SCHEMA_ID: &str = "disclosure_record_v1";

const HKEX_REGISTRY_JSON: &str = include_str!("../data/hkex_registry.json");

/// Placeholders a question template may reference.
pub const TEMPLATE_FIELDS: &[&str] = &[
    "id",
    "aspect",
    "kpi",
    "topics",
    "quantity",
    "category",
    "kind",
    "knowledge",
    "search_terms",
];

#[derive(Debug, Error)]
pub enum MetadataError {
    #[error("cannot read registry {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed registry: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid indicator `{id}`: {reason}")]
    InvalidIndicator { id: String, reason: String },
    #[error("invalid expression `{id}`: {reason}")]
    InvalidExpression { id: String, reason: String },
    #[error("indicator `{indicator}` references missing {kind} `{reference}`")]
    DanglingReference {
        indicator: String,
        kind: &'static str,
        reference: String,
    },
    #[error("unresolved placeholder `{{{0}}}` in question template")]
    UnresolvedPlaceholder(String),
    #[error("malformed template: {0}")]
    MalformedTemplate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    E,
    S,
    G,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::E, Category::S, Category::G];
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Category::E => "E",
            Category::S => "S",
            Category::G => "G",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IndicatorKind {
    Numerical,
    Textual,
}

impl IndicatorKind {
    pub const ALL: [IndicatorKind; 2] = [IndicatorKind::Numerical, IndicatorKind::Textual];
}

impl fmt::Display for IndicatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IndicatorKind::Numerical => f.write_str("Numerical"),
            IndicatorKind::Textual => f.write_str("Textual"),
        }
    }
}

/// What an indicator asks the model to extract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quantity {
    AbsoluteValues,
    KeyActions,
    Textual,
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Quantity::AbsoluteValues => f.write_str("Absolute Values"),
            Quantity::KeyActions => f.write_str("Key Actions"),
            Quantity::Textual => f.write_str("Textual"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndicatorSpec {
    pub id: String,
    pub aspect: String,
    pub kpi: String,
    pub topics: Vec<String>,
    pub quantity: Quantity,
    pub category: Category,
    pub kind: IndicatorKind,
    pub knowledge: String,
    pub search_terms: Vec<String>,
    pub prompt_template_id: String,
    pub output_schema_id: String,
}

impl IndicatorSpec {
    fn check(&self) -> Result<(), MetadataError> {
        let invalid = |reason: &str| MetadataError::InvalidIndicator {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.trim().is_empty() {
            return Err(invalid("empty id"));
        }
        if self.topics.is_empty() || self.topics.iter().any(|t| t.trim().is_empty()) {
            return Err(invalid("topics must be a non-empty list of non-empty strings"));
        }
        if self.search_terms.is_empty() || self.search_terms.iter().any(|t| t.trim().is_empty()) {
            return Err(invalid("search_terms must be a non-empty list of non-empty strings"));
        }
        let consistent = match self.kind {
            IndicatorKind::Numerical => self.quantity == Quantity::AbsoluteValues,
            IndicatorKind::Textual => {
                matches!(self.quantity, Quantity::KeyActions | Quantity::Textual)
            }
        };
        if !consistent {
            return Err(invalid(&format!(
                "kind {} is incompatible with quantity {:?}",
                self.kind, self.quantity
            )));
        }
        Ok(())
    }

    fn field(&self, name: &str) -> Option<String> {
        let v = match name {
            "id" => self.id.clone(),
            "aspect" => self.aspect.clone(),
            "kpi" => self.kpi.clone(),
            "topics" => self.topics.join(", "),
            "quantity" => self.quantity.to_string(),
            "category" => self.category.to_string(),
            "kind" => self.kind.to_string(),
            "knowledge" => self.knowledge.clone(),
            "search_terms" => self.search_terms.join(", "),
            _ => return None,
        };
        Some(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptExpression {
    pub id: String,
    /// Role instructions placed at the head of every prompt.
    pub preset: String,
    pub question_template: String,
    /// Answer schema id; currently only [`RECORD_SCHEMA_ID`].
    pub answer_format: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetadataRegistry {
    pub standard_name: String,
    pub indicators: Vec<IndicatorSpec>,
    pub expressions: Vec<PromptExpression>,
}

enum Piece<'a> {
    Literal(&'a str),
    Field(&'a str),
}

fn parse_template(template: &str) -> Result<Vec<Piece<'_>>, MetadataError> {
    let mut pieces = Vec::new();
    let mut rest = template;
    while !rest.is_empty() {
        if let Some(tail) = rest.strip_prefix("{{") {
            pieces.push(Piece::Literal("{"));
            rest = tail;
        } else if let Some(tail) = rest.strip_prefix("}}") {
            pieces.push(Piece::Literal("}"));
            rest = tail;
        } else if let Some(tail) = rest.strip_prefix('{') {
            let close = tail
                .find('}')
                .ok_or_else(|| MetadataError::MalformedTemplate(format!("unclosed `{{` in {template:?}")))?;
            pieces.push(Piece::Field(&tail[..close]));
            rest = &tail[close + 1..];
        } else if rest.starts_with('}') {
            return Err(MetadataError::MalformedTemplate(format!("stray `}}` in {template:?}")));
        } else {
            let next = rest.find(['{', '}']).unwrap_or(rest.len());
            pieces.push(Piece::Literal(&rest[..next]));
            rest = &rest[next..];
        }
    }
    Ok(pieces)
}

/// Substitute `{field}` placeholders of `template` with fields of `spec`.
/// `{{` and `}}` produce literal braces.
pub fn render_template(template: &str, spec: &IndicatorSpec) -> Result<String, MetadataError> {
    let mut out = String::with_capacity(template.len() + 64);
    for piece in parse_template(template)? {
        match piece {
            Piece::Literal(s) => out.push_str(s),
            Piece::Field(name) => {
                let value = spec
                    .field(name.trim())
                    .ok_or_else(|| MetadataError::UnresolvedPlaceholder(name.to_string()))?;
                out.push_str(&value);
            }
        }
    }
    Ok(out)
}

impl MetadataRegistry {
    /// Parse and validate a registry from JSON text.
    pub fn from_json(text: &str) -> Result<Self, MetadataError> {
        let registry: MetadataRegistry = serde_json::from_str(text)?;
        registry.validate()?;
        Ok(registry)
    }

    pub fn load(path: &Path) -> Result<Self, MetadataError> {
        let text = std::fs::read_to_string(path).map_err(|source| MetadataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// The bundled HKEx-style registry (70 indicators).
    pub fn bundled_hkex() -> Self {
        Self::from_json(HKEX_REGISTRY_JSON).expect("bundled registry is valid")
    }

    pub fn bundled_hkex_json() -> &'static str {
        HKEX_REGISTRY_JSON
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("registry serializes")
    }

    pub fn validate(&self) -> Result<(), MetadataError> {
        let mut expression_ids = BTreeSet::new();
        let mut schema_ids = BTreeSet::new();
        for expr in &self.expressions {
            if !expression_ids.insert(expr.id.as_str()) {
                return Err(MetadataError::InvalidExpression {
                    id: expr.id.clone(),
                    reason: "duplicate expression id".into(),
                });
            }
            if expr.answer_format != RECORD_SCHEMA_ID {
                return Err(MetadataError::InvalidExpression {
                    id: expr.id.clone(),
                    reason: format!(
                        "answer_format `{}` is not a known schema (expected `{RECORD_SCHEMA_ID}`)",
                        expr.answer_format
                    ),
                });
            }
            for piece in parse_template(&expr.question_template)? {
                if let Piece::Field(name) = piece {
                    if !TEMPLATE_FIELDS.contains(&name.trim()) {
                        return Err(MetadataError::InvalidExpression {
                            id: expr.id.clone(),
                            reason: format!("unknown placeholder `{{{name}}}`"),
                        });
                    }
                }
            }
            schema_ids.insert(expr.answer_format.as_str());
        }

        let mut ids = BTreeSet::new();
        for spec in &self.indicators {
            spec.check()?;
            if !ids.insert(spec.id.as_str()) {
                return Err(MetadataError::InvalidIndicator {
                    id: spec.id.clone(),
                    reason: "duplicate id".into(),
                });
            }
            if !expression_ids.contains(spec.prompt_template_id.as_str()) {
                return Err(MetadataError::DanglingReference {
                    indicator: spec.id.clone(),
                    kind: "prompt_template_id",
                    reference: spec.prompt_template_id.clone(),
                });
            }
            if !schema_ids.contains(spec.output_schema_id.as_str()) {
                return Err(MetadataError::DanglingReference {
                    indicator: spec.id.clone(),
                    kind: "output_schema_id",
                    reference: spec.output_schema_id.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.indicators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indicators.is_empty()
    }

    pub fn indicator(&self, id: &str) -> Option<&IndicatorSpec> {
        self.indicators.iter().find(|s| s.id == id)
    }

    pub fn expression(&self, id: &str) -> Option<&PromptExpression> {
        self.expressions.iter().find(|e| e.id == id)
    }

    /// Number of indicators in the given (category, kind) cell.
    pub fn count_by(&self, category: Category, kind: IndicatorKind) -> usize {
        self.indicators
            .iter()
            .filter(|s| s.category == category && s.kind == kind)
            .count()
    }

    /// Counts for every (category, kind) cell, including empty ones.
    pub fn counts(&self) -> BTreeMap<(Category, IndicatorKind), usize> {
        let mut out = BTreeMap::new();
        for c in Category::ALL {
            for k in IndicatorKind::ALL {
                out.insert((c, k), self.count_by(c, k));
            }
        }
        out
    }

    /// Build the targeted question for `spec` from its prompt expression.
    pub fn render_question(&self, spec: &IndicatorSpec) -> Result<String, MetadataError> {
        let expr = self
            .expression(&spec.prompt_template_id)
            .ok_or_else(|| MetadataError::DanglingReference {
                indicator: spec.id.clone(),
                kind: "prompt_template_id",
                reference: spec.prompt_template_id.clone(),
            })?;
        render_template(&expr.question_template, spec)
    }

    /// Human-readable count table, one row per category.
    pub fn stats_table(&self) -> String {
        let mut out = format!("standard: {}\n", self.standard_name);
        out.push_str("category  numerical  textual  total\n");
        let (mut tn, mut tt) = (0, 0);
        for c in Category::ALL {
            let n = self.count_by(c, IndicatorKind::Numerical);
            let t = self.count_by(c, IndicatorKind::Textual);
            tn += n;
            tt += t;
            out.push_str(&format!("{:<8}  {:>9}  {:>7}  {:>5}\n", c.to_string(), n, t, n + t));
        }
        out.push_str(&format!("{:<8}  {:>9}  {:>7}  {:>5}\n", "total", tn, tt, tn + tt));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(topics: &[&str]) -> IndicatorSpec {
        IndicatorSpec {
            id: "x".into(),
            aspect: "A".into(),
            kpi: "the kpi".into(),
            topics: topics.iter().map(|s| s.to_string()).collect(),
            quantity: Quantity::AbsoluteValues,
            category: Category::E,
            kind: IndicatorKind::Numerical,
            knowledge: String::new(),
            search_terms: vec!["kpi".into()],
            prompt_template_id: "t".into(),
            output_schema_id: RECORD_SCHEMA_ID.into(),
        }
    }

    fn registry_with(template: &str, indicators: Vec<IndicatorSpec>) -> String {
        let reg = MetadataRegistry {
            standard_name: "test".into(),
            indicators,
            expressions: vec![PromptExpression {
                id: "t".into(),
                preset: "p".into(),
                question_template: template.into(),
                answer_format: RECORD_SCHEMA_ID.into(),
            }],
        };
        serde_json::to_string(&reg).unwrap()
    }

    #[test]
    fn bundled_registry_matches_taxonomy_counts() {
        let reg = MetadataRegistry::bundled_hkex();
        assert_eq!(reg.len(), 70);
        let numerical: usize = Category::ALL
            .iter()
            .map(|c| reg.count_by(*c, IndicatorKind::Numerical))
            .sum();
        assert_eq!(numerical, 34);
        assert_eq!(reg.len() - numerical, 36);
        assert_eq!(reg.count_by(Category::E, IndicatorKind::Numerical), 12);
        assert_eq!(reg.count_by(Category::S, IndicatorKind::Numerical), 18);
        assert_eq!(reg.count_by(Category::G, IndicatorKind::Numerical), 4);
        assert_eq!(reg.count_by(Category::E, IndicatorKind::Textual), 14);
        assert_eq!(reg.count_by(Category::S, IndicatorKind::Textual), 15);
        assert_eq!(reg.count_by(Category::G, IndicatorKind::Textual), 7);
    }

    #[test]
    fn empty_registry_is_valid() {
        let reg = MetadataRegistry::from_json(&registry_with("{kpi}", vec![])).unwrap();
        assert!(reg.is_empty());
        assert_eq!(reg.count_by(Category::S, IndicatorKind::Textual), 0);
    }

    #[test]
    fn dangling_template_reference_names_the_id() {
        let mut s = spec(&["T"]);
        s.prompt_template_id = "X".into();
        let err = MetadataRegistry::from_json(&registry_with("{kpi}", vec![s])).unwrap_err();
        match err {
            MetadataError::DanglingReference { reference, .. } => assert_eq!(reference, "X"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_quantity_and_unknown_fields_are_rejected() {
        let json = registry_with("{kpi}", vec![spec(&["T"])]);
        let bad_quantity = json.replace("\"AbsoluteValues\"", "\"Relative Values\"");
        assert!(matches!(
            MetadataRegistry::from_json(&bad_quantity),
            Err(MetadataError::Parse(_))
        ));
        let extra = json.replacen("\"standard_name\"", "\"colour\":1,\"standard_name\"", 1);
        assert!(matches!(
            MetadataRegistry::from_json(&extra),
            Err(MetadataError::Parse(_))
        ));
    }

    #[test]
    fn kind_quantity_mismatch_names_indicator() {
        let mut s = spec(&["T"]);
        s.quantity = Quantity::KeyActions;
        let err = MetadataRegistry::from_json(&registry_with("{kpi}", vec![s])).unwrap_err();
        assert!(err.to_string().contains("`x`"), "{err}");
    }

    #[test]
    fn empty_topics_rejected() {
        let err = MetadataRegistry::from_json(&registry_with("{kpi}", vec![spec(&[])])).unwrap_err();
        assert!(matches!(err, MetadataError::InvalidIndicator { .. }));
    }

    #[test]
    fn direct_substitution() {
        let s = spec(&["T"]);
        let reg = MetadataRegistry::from_json(&registry_with("Q: {kpi} about {topics}", vec![s.clone()])).unwrap();
        assert_eq!(reg.render_question(&s).unwrap(), "Q: the kpi about T");
    }

    #[test]
    fn unknown_placeholder_errors() {
        let s = spec(&["T"]);
        assert!(matches!(
            render_template("Q: {foo}", &s),
            Err(MetadataError::UnresolvedPlaceholder(p)) if p == "foo"
        ));
        // and the registry refuses to load such a template
        assert!(MetadataRegistry::from_json(&registry_with("Q: {foo}", vec![])).is_err());
    }

    #[test]
    fn escaped_braces_are_literal() {
        let s = spec(&["T"]);
        assert_eq!(render_template("{{x}} {kpi}", &s).unwrap(), "{x} the kpi");
    }

    #[test]
    fn waste_question_mentions_kpi_and_topics() {
        let reg = MetadataRegistry::bundled_hkex();
        let spec = reg
            .indicators
            .iter()
            .find(|s| s.kpi.starts_with("Total waste produced"))
            .expect("waste indicator present");
        let q = reg.render_question(spec).unwrap();
        assert!(q.contains("Total waste produced"));
        assert!(q.contains("Hazardous Waste"));
        assert!(q.contains(&spec.aspect));
        for t in &spec.topics {
            assert!(q.contains(t.as_str()));
        }
        assert_eq!(q, reg.render_question(spec).unwrap());
    }

    #[test]
    fn round_trip_preserves_registry() {
        let reg = MetadataRegistry::bundled_hkex();
        let again = MetadataRegistry::from_json(&reg.to_json_pretty()).unwrap();
        assert_eq!(reg, again);
    }

    #[test]
    fn cell_counts_sum_to_total() {
        let reg = MetadataRegistry::bundled_hkex();
        assert_eq!(reg.counts().values().sum::<usize>(), reg.len());
    }
}
