//! Accuracy metrics and the ablation runner.
//!
//! Acc_DC is the agreement rate between labeled and predicted disclosure
//! over every registry indicator. Acc_DE is the exact-match rate of
//! predicted values against labeled values, where units compare through an
//! alias table. Both are kept next to the per-indicator match table they
//! were computed from, so a report can be rechecked independently.

mod ablation;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::ExtractionRecord;
use crate::metadata::{IndicatorKind, MetadataRegistry};

pub use ablation::{
    comparison_table, run_ablation, AblationArm, AblationConfig, AblationOutcome, InMemoryKbs, KbSource,
};

const UNIT_ALIASES_JSON: &str = include_str!("../../data/unit_aliases.json");

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("labels for `{doc_id}`: {reason}")]
    InvalidLabels { doc_id: String, reason: String },
    #[error("no labels for document `{0}`")]
    MissingLabels(String),
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("nothing to aggregate")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueLabel {
    #[serde(with = "crate::value::decimal")]
    pub value: Decimal,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSet {
    pub doc_id: String,
    /// Indicator id → disclosed. Covers the whole registry.
    pub disclosure_labels: BTreeMap<String, bool>,
    /// Indicator id → topic → labeled value, for disclosed numerical data.
    #[serde(default)]
    pub value_labels: BTreeMap<String, BTreeMap<String, ValueLabel>>,
}

impl LabelSet {
    pub fn n_v(&self) -> usize {
        self.value_labels.values().map(BTreeMap::len).sum()
    }

    pub fn validate(&self, registry: &MetadataRegistry) -> Result<(), EvalError> {
        let fail = |reason: String| EvalError::InvalidLabels {
            doc_id: self.doc_id.clone(),
            reason,
        };
        for spec in &registry.indicators {
            if !self.disclosure_labels.contains_key(&spec.id) {
                return Err(fail(format!("no disclosure label for `{}`", spec.id)));
            }
        }
        if let Some(extra) = self.disclosure_labels.keys().find(|k| registry.indicator(k).is_none()) {
            return Err(fail(format!("label for unknown indicator `{extra}`")));
        }
        for (id, topics) in &self.value_labels {
            let spec = registry
                .indicator(id)
                .ok_or_else(|| fail(format!("value label for unknown indicator `{id}`")))?;
            if spec.kind != IndicatorKind::Numerical {
                return Err(fail(format!("value label for textual indicator `{id}`")));
            }
            if self.disclosure_labels.get(id) != Some(&true) {
                return Err(fail(format!("value label for `{id}`, which is labeled undisclosed")));
            }
            for topic in topics.keys() {
                if !spec.topics.iter().any(|t| t.trim() == topic.trim()) {
                    return Err(fail(format!("`{id}` has no topic `{topic}`")));
                }
            }
        }
        Ok(())
    }
}

pub fn labels_from_jsonl(text: &str) -> Result<Vec<LabelSet>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

pub fn labels_to_jsonl(labels: &[LabelSet]) -> String {
    labels
        .iter()
        .map(|l| serde_json::to_string(l).expect("labels serialize") + "\n")
        .collect()
}

pub fn load_labels(path: &Path) -> Result<Vec<LabelSet>, EvalError> {
    let io = |reason: String| EvalError::Io {
        path: path.display().to_string(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
    labels_from_jsonl(&text).map_err(io)
}

/// Groups of interchangeable unit spellings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitAliases {
    pub groups: Vec<Vec<String>>,
}

fn unit_key(u: &str) -> String {
    u.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

impl UnitAliases {
    pub fn bundled() -> Self {
        serde_json::from_str(UNIT_ALIASES_JSON).expect("bundled unit aliases parse")
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Canonical spelling: the first member of the unit's group, or the
    /// whitespace-normalized, lowercased unit itself.
    pub fn canonical(&self, unit: &str) -> String {
        let key = unit_key(unit);
        self.groups
            .iter()
            .find(|g| g.iter().any(|u| unit_key(u) == key))
            .map(|g| g[0].clone())
            .unwrap_or(key)
    }

    pub fn equivalent(&self, a: &str, b: &str) -> bool {
        self.canonical(a) == self.canonical(b)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    /// Accept |predicted - label| <= tol * |label|. Off by default.
    #[serde(default, with = "crate::value::opt_decimal", skip_serializing_if = "Option::is_none")]
    pub rel_tolerance: Option<Decimal>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisclosureMatch {
    pub indicator_id: String,
    pub label: bool,
    pub predicted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueMatch {
    pub indicator_id: String,
    pub topic: String,
    #[serde(with = "crate::value::decimal")]
    pub label_value: Decimal,
    pub label_unit: String,
    #[serde(with = "crate::value::opt_decimal")]
    pub predicted_value: Option<Decimal>,
    pub predicted_unit: Option<String>,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub doc_id: String,
    pub config_id: String,
    pub provider: String,
    pub acc_dc: f64,
    /// `None` when the document has no labeled values.
    pub acc_de: Option<f64>,
    /// Share of labeled-disclosed indicators predicted as disclosed.
    pub disclosed_recall: Option<f64>,
    pub n_mq: usize,
    pub n_v: usize,
    pub disclosure_matches: Vec<DisclosureMatch>,
    pub value_matches: Vec<ValueMatch>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl EvaluationReport {
    /// Metrics recomputed from the match tables: (acc_dc, acc_de, recall).
    pub fn recompute(&self) -> (f64, Option<f64>, Option<f64>) {
        let agree = self
            .disclosure_matches
            .iter()
            .filter(|m| m.label == m.predicted)
            .count();
        let matched = self.value_matches.iter().filter(|m| m.matched).count();
        let positives: Vec<_> = self.disclosure_matches.iter().filter(|m| m.label).collect();
        (
            ratio(agree, self.disclosure_matches.len()).unwrap_or(0.0),
            ratio(matched, self.value_matches.len()),
            ratio(positives.iter().filter(|m| m.predicted).count(), positives.len()),
        )
    }

    pub fn is_consistent(&self) -> bool {
        self.recompute() == (self.acc_dc, self.acc_de, self.disclosed_recall)
            && self.n_mq == self.disclosure_matches.len()
            && self.n_v == self.value_matches.len()
    }
}

/// Predicted disclosure per indicator: true if any record for it says so.
fn predicted_disclosure<'a>(records: &[&'a ExtractionRecord]) -> HashMap<&'a str, bool> {
    let mut out: HashMap<&str, bool> = HashMap::new();
    for r in records {
        *out.entry(r.indicator_id.as_str()).or_default() |= r.disclosure;
    }
    out
}

fn values_match(pred: Decimal, label: Decimal, opts: &EvalOptions) -> bool {
    match opts.rel_tolerance {
        None => pred == label,
        Some(tol) => (pred - label).abs() <= tol * label.abs(),
    }
}

/// Score one document's records (records for other documents are ignored).
pub fn evaluate_document(
    labels: &LabelSet,
    records: &[ExtractionRecord],
    registry: &MetadataRegistry,
    aliases: &UnitAliases,
    opts: &EvalOptions,
) -> Result<EvaluationReport, EvalError> {
    labels.validate(registry)?;
    let mine: Vec<&ExtractionRecord> = records.iter().filter(|r| r.doc_id == labels.doc_id).collect();
    let predicted = predicted_disclosure(&mine);
    let disclosure_matches: Vec<DisclosureMatch> = registry
        .indicators
        .iter()
        .map(|spec| DisclosureMatch {
            indicator_id: spec.id.clone(),
            label: labels.disclosure_labels[&spec.id],
            predicted: predicted.get(spec.id.as_str()).copied().unwrap_or(false),
        })
        .collect();

    let mut value_matches = Vec::new();
    for (id, topics) in &labels.value_labels {
        for (topic, label) in topics {
            let rec = mine
                .iter()
                .find(|r| r.indicator_id == *id && r.topic.trim() == topic.trim() && r.disclosure);
            let (pv, pu) = rec.map_or((None, None), |r| (r.value, r.unit.clone()));
            let matched = match (pv, &pu) {
                (Some(v), Some(u)) => values_match(v, label.value, opts) && aliases.equivalent(u, &label.unit),
                _ => false,
            };
            value_matches.push(ValueMatch {
                indicator_id: id.clone(),
                topic: topic.clone(),
                label_value: label.value,
                label_unit: label.unit.clone(),
                predicted_value: pv,
                predicted_unit: pu,
                matched,
            });
        }
    }

    let mut report = EvaluationReport {
        doc_id: labels.doc_id.clone(),
        config_id: String::new(),
        provider: String::new(),
        acc_dc: 0.0,
        acc_de: None,
        disclosed_recall: None,
        n_mq: disclosure_matches.len(),
        n_v: value_matches.len(),
        disclosure_matches,
        value_matches,
    };
    (report.acc_dc, report.acc_de, report.disclosed_recall) = report.recompute();
    Ok(report)
}

/// Acc_DC for one document.
pub fn acc_dc(labels: &LabelSet, records: &[ExtractionRecord], registry: &MetadataRegistry) -> Result<f64, EvalError> {
    Ok(evaluate_document(
        labels,
        records,
        registry,
        &UnitAliases::bundled(),
        &EvalOptions::default(),
    )?
    .acc_dc)
}

/// Acc_DE for one document; `None` (N/A) when nothing is labeled.
pub fn acc_de(
    labels: &LabelSet,
    records: &[ExtractionRecord],
    registry: &MetadataRegistry,
) -> Result<Option<f64>, EvalError> {
    Ok(evaluate_document(
        labels,
        records,
        registry,
        &UnitAliases::bundled(),
        &EvalOptions::default(),
    )?
    .acc_de)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentFailure {
    pub doc_id: String,
    pub error: String,
}

/// Mean over documents of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub config_id: String,
    pub provider: String,
    pub n_docs: usize,
    pub acc_dc: f64,
    /// Mean over documents with labeled values.
    pub acc_de: Option<f64>,
    pub disclosed_recall: Option<f64>,
    pub documents: Vec<EvaluationReport>,
    #[serde(default)]
    pub failures: Vec<DocumentFailure>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn aggregate(
    config_id: &str,
    provider: &str,
    mut documents: Vec<EvaluationReport>,
    failures: Vec<DocumentFailure>,
) -> Result<AggregateReport, EvalError> {
    for d in &mut documents {
        d.config_id = config_id.to_string();
        d.provider = provider.to_string();
    }
    documents.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    Ok(AggregateReport {
        config_id: config_id.to_string(),
        provider: provider.to_string(),
        n_docs: documents.len(),
        acc_dc: mean(documents.iter().map(|d| d.acc_dc)).ok_or(EvalError::Empty)?,
        acc_de: mean(documents.iter().filter_map(|d| d.acc_de)),
        disclosed_recall: mean(documents.iter().filter_map(|d| d.disclosed_recall)),
        documents,
        failures,
    })
}

/// Evaluate every labeled document; labels without records count as all
/// undisclosed.
pub fn evaluate_corpus(
    labels: &[LabelSet],
    records: &[ExtractionRecord],
    registry: &MetadataRegistry,
    aliases: &UnitAliases,
    opts: &EvalOptions,
    config_id: &str,
    provider: &str,
) -> Result<AggregateReport, EvalError> {
    let docs = labels
        .iter()
        .map(|l| evaluate_document(l, records, registry, aliases, opts))
        .collect::<Result<Vec<_>, _>>()?;
    aggregate(config_id, provider, docs, Vec::new())
}

pub fn fmt_pct(x: Option<f64>) -> String {
    x.map_or_else(|| "N/A".to_string(), |v| format!("{:.1}%", v * 100.0))
}

/// Per-document table followed by the mean row.
pub fn report_table(report: &AggregateReport) -> String {
    let mut out = format!(
        "config: {}  provider: {}\n{:<24} {:>8} {:>8} {:>5} {:>4}\n",
        report.config_id, report.provider, "document", "Acc_DC", "Acc_DE", "N_mq", "N_v"
    );
    for d in &report.documents {
        out.push_str(&format!(
            "{:<24} {:>8} {:>8} {:>5} {:>4}\n",
            d.doc_id,
            fmt_pct(Some(d.acc_dc)),
            fmt_pct(d.acc_de),
            d.n_mq,
            d.n_v
        ));
    }
    out.push_str(&format!(
        "{:<24} {:>8} {:>8}\n",
        format!("mean ({} docs)", report.n_docs),
        fmt_pct(Some(report.acc_dc)),
        fmt_pct(report.acc_de)
    ));
    for f in &report.failures {
        out.push_str(&format!("failed: {}: {}\n", f.doc_id, f.error));
    }
    out
}
