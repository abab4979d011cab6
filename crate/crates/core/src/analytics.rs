//! Corpus-level statistics over extraction records: disclosure rates and
//! tiers, market-value-normalized emission intensity, and key-action
//! phrase frequencies.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rust_decimal::prelude::ToPrimitive;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::agent::ExtractionRecord;
use crate::docmodel::StructuredDocument;
use crate::eval::UnitAliases;
use crate::metadata::{Category, IndicatorKind, MetadataRegistry};

const ACTION_THEMES_JSON: &str = include_str!("../data/action_themes.json");

pub const DEFAULT_SCOPE1_ID: &str = "A1.2-S1";
pub const DEFAULT_SCOPE2_ID: &str = "A1.2-S2";
pub const DEFAULT_TOP_N: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tier {
    Excellent,
    Moderate,
    Poor,
    Insufficient,
}

impl Tier {
    /// Strict thresholds: over 0.8, over 0.6, over 0.4.
    pub fn from_rate(rate: f64) -> Tier {
        if rate > 0.8 {
            Tier::Excellent
        } else if rate > 0.6 {
            Tier::Moderate
        } else if rate > 0.4 {
            Tier::Poor
        } else {
            Tier::Insufficient
        }
    }
}

/// Company facts needed for grouping and normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocInfo {
    pub doc_id: String,
    pub company: String,
    pub industry: String,
    pub market_cap_mhkd: Option<f64>,
}

impl From<&StructuredDocument> for DocInfo {
    fn from(d: &StructuredDocument) -> Self {
        DocInfo {
            doc_id: d.doc_id.clone(),
            company: d.company.clone(),
            industry: d.industry.clone(),
            market_cap_mhkd: d.market_cap_mhkd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    ByIndustry,
    Overall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompanyRates {
    pub doc_id: String,
    pub industry: String,
    pub env_disclosed: usize,
    pub soc_disclosed: usize,
    pub env_rate: f64,
    pub soc_rate: f64,
    pub overall_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisclosureStats {
    /// Industry name, or `"overall"`.
    pub scope: String,
    pub n_companies: usize,
    pub env_rate: f64,
    pub soc_rate: f64,
    pub overall_rate: f64,
    /// Tier of `overall_rate`.
    pub tier: Tier,
    pub env_tier: Tier,
    pub soc_tier: Tier,
}

fn disclosed_set(records: &[ExtractionRecord]) -> HashMap<(&str, &str), bool> {
    let mut out: HashMap<(&str, &str), bool> = HashMap::new();
    for r in records {
        *out.entry((r.doc_id.as_str(), r.indicator_id.as_str())).or_default() |= r.disclosure;
    }
    out
}

/// Per-company rates over the numerical E and S indicators. Each
/// indicator counts once, however many topics it has.
pub fn company_rates(records: &[ExtractionRecord], registry: &MetadataRegistry, docs: &[DocInfo]) -> Vec<CompanyRates> {
    let disclosed = disclosed_set(records);
    let ids = |c: Category| -> Vec<&str> {
        registry
            .indicators
            .iter()
            .filter(|s| s.category == c && s.kind == IndicatorKind::Numerical)
            .map(|s| s.id.as_str())
            .collect()
    };
    let (env, soc) = (ids(Category::E), ids(Category::S));
    let rate = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    docs.iter()
        .map(|d| {
            let count = |ids: &[&str]| {
                ids.iter()
                    .filter(|i| disclosed.get(&(d.doc_id.as_str(), **i)).copied().unwrap_or(false))
                    .count()
            };
            let (e, s) = (count(&env), count(&soc));
            CompanyRates {
                doc_id: d.doc_id.clone(),
                industry: d.industry.clone(),
                env_disclosed: e,
                soc_disclosed: s,
                env_rate: rate(e, env.len()),
                soc_rate: rate(s, soc.len()),
                overall_rate: rate(e + s, env.len() + soc.len()),
            }
        })
        .collect()
}

fn stats_of(scope: String, rates: &[&CompanyRates]) -> DisclosureStats {
    let n = rates.len().max(1) as f64;
    let env = rates.iter().map(|r| r.env_rate).sum::<f64>() / n;
    let soc = rates.iter().map(|r| r.soc_rate).sum::<f64>() / n;
    let overall = rates.iter().map(|r| r.overall_rate).sum::<f64>() / n;
    DisclosureStats {
        scope,
        n_companies: rates.len(),
        env_rate: env,
        soc_rate: soc,
        overall_rate: overall,
        tier: Tier::from_rate(overall),
        env_tier: Tier::from_rate(env),
        soc_tier: Tier::from_rate(soc),
    }
}

/// Mean company rates per industry (sorted by name) or over the corpus.
pub fn disclosure_stats(
    records: &[ExtractionRecord],
    registry: &MetadataRegistry,
    docs: &[DocInfo],
    grouping: Grouping,
) -> Vec<DisclosureStats> {
    let rates = company_rates(records, registry, docs);
    match grouping {
        Grouping::Overall => {
            if rates.is_empty() {
                return Vec::new();
            }
            vec![stats_of("overall".into(), &rates.iter().collect::<Vec<_>>())]
        }
        Grouping::ByIndustry => {
            let mut groups: BTreeMap<&str, Vec<&CompanyRates>> = BTreeMap::new();
            for r in &rates {
                groups.entry(r.industry.as_str()).or_default().push(r);
            }
            groups.into_iter().map(|(k, v)| stats_of(k.to_string(), &v)).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityStat {
    pub doc_id: String,
    pub industry: String,
    /// tCO2e per million HKD of market value.
    pub scope1_intensity: Option<f64>,
    pub scope2_intensity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentIssue {
    pub doc_id: String,
    pub issue: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IntensityReport {
    pub stats: Vec<IntensityStat>,
    pub issues: Vec<DocumentIssue>,
}

/// Emissions in tonnes CO2e, if the record's unit allows conversion.
fn emissions_tonnes(r: &ExtractionRecord, aliases: &UnitAliases) -> Result<Option<Decimal>, String> {
    let (Some(v), true) = (r.value, r.disclosure) else {
        return Ok(None);
    };
    let unit = r.unit.as_deref().unwrap_or("");
    match aliases.canonical(unit).as_str() {
        "tCO2e" | "tonnes" => Ok(Some(v)),
        "kgCO2e" | "kg" => Ok(Some(v / Decimal::from(1000))),
        other => Err(format!("{}: unsupported emissions unit `{other}`", r.indicator_id)),
    }
}

pub fn intensity(emissions: Decimal, market_cap_mhkd: Decimal) -> Option<f64> {
    (market_cap_mhkd > Decimal::ZERO)
        .then(|| emissions.checked_div(market_cap_mhkd))
        .flatten()
        .and_then(|d| d.to_f64())
}

/// Scope 1 and Scope 2 intensity per document. A stat is present only when
/// both an emissions value and a positive market value exist; a
/// non-positive market value or an unusable unit is reported as an issue.
pub fn emission_intensity(
    records: &[ExtractionRecord],
    docs: &[DocInfo],
    scope_ids: (&str, &str),
    aliases: &UnitAliases,
) -> IntensityReport {
    let mut out = IntensityReport::default();
    for d in docs {
        let Some(cap) = d.market_cap_mhkd else { continue };
        let cap = match Decimal::from_f64_retain(cap) {
            Some(c) if c > Decimal::ZERO => c,
            _ => {
                out.issues.push(DocumentIssue {
                    doc_id: d.doc_id.clone(),
                    issue: format!("market_cap_mhkd must be positive, got {cap}"),
                });
                continue;
            }
        };
        let mut scope = |id: &str| -> Option<f64> {
            let r = records
                .iter()
                .find(|r| r.doc_id == d.doc_id && r.indicator_id == id && r.disclosure)?;
            match emissions_tonnes(r, aliases) {
                Ok(v) => intensity(v?, cap),
                Err(issue) => {
                    out.issues.push(DocumentIssue {
                        doc_id: d.doc_id.clone(),
                        issue,
                    });
                    None
                }
            }
        };
        let (s1, s2) = (scope(scope_ids.0), scope(scope_ids.1));
        if s1.is_some() || s2.is_some() {
            out.stats.push(IntensityStat {
                doc_id: d.doc_id.clone(),
                industry: d.industry.clone(),
                scope1_intensity: s1,
                scope2_intensity: s2,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndustryIntensity {
    pub industry: String,
    pub n_scope1: usize,
    pub mean_scope1: Option<f64>,
    pub n_scope2: usize,
    pub mean_scope2: Option<f64>,
}

pub fn intensity_by_industry(stats: &[IntensityStat]) -> Vec<IndustryIntensity> {
    let mut groups: BTreeMap<&str, Vec<&IntensityStat>> = BTreeMap::new();
    for s in stats {
        groups.entry(&s.industry).or_default().push(s);
    }
    let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    groups
        .into_iter()
        .map(|(industry, v)| {
            let s1: Vec<f64> = v.iter().filter_map(|s| s.scope1_intensity).collect();
            let s2: Vec<f64> = v.iter().filter_map(|s| s.scope2_intensity).collect();
            IndustryIntensity {
                industry: industry.to_string(),
                n_scope1: s1.len(),
                mean_scope1: mean(s1),
                n_scope2: s2.len(),
                mean_scope2: mean(s2),
            }
        })
        .collect()
}

/// Phrase dictionary: which theme each category's actions belong to, and
/// the spellings that map onto each canonical phrase of a theme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThemeMap {
    pub categories: BTreeMap<Category, String>,
    pub themes: BTreeMap<String, BTreeMap<String, Vec<String>>>,
}

impl ThemeMap {
    pub fn bundled() -> Self {
        serde_json::from_str(ACTION_THEMES_JSON).expect("bundled theme map parses")
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Canonical phrase of `action` within `theme`: the phrase with the
    /// longest spelling contained in the lowercased action, ties broken by
    /// phrase name.
    pub fn normalize(&self, theme: &str, action: &str) -> Option<&str> {
        let lower = action.to_lowercase();
        let mut best: Option<(usize, &str)> = None;
        for (canonical, spellings) in self.themes.get(theme)? {
            let own = canonical.to_lowercase();
            for s in spellings.iter().map(|s| s.to_lowercase()).chain([own]) {
                if !s.is_empty() && lower.contains(&s) {
                    let better = match best {
                        None => true,
                        Some((len, name)) => s.len() > len || (s.len() == len && canonical.as_str() < name),
                    };
                    if better {
                        best = Some((s.len(), canonical));
                    }
                }
            }
        }
        best.map(|(_, c)| c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermShare {
    pub phrase: String,
    pub count: usize,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermFrequencyTable {
    pub theme: String,
    /// Actions seen in this theme, mapped or not; the share denominator.
    pub n_actions: usize,
    pub unmapped: usize,
    pub entries: Vec<TermShare>,
}

/// Split an action field into individual actions (`;` or newline separated).
pub fn split_actions(action: &str) -> impl Iterator<Item = &str> {
    action.split([';', '\n']).map(str::trim).filter(|s| !s.is_empty())
}

/// Top-`top_n` canonical phrases per theme among disclosed records'
/// actions. Shares are counts over all actions of the theme, so unmapped
/// actions lower every share.
pub fn key_action_frequencies(
    records: &[ExtractionRecord],
    registry: &MetadataRegistry,
    themes: &ThemeMap,
    top_n: usize,
) -> Vec<TermFrequencyTable> {
    let mut per_theme: BTreeMap<&str, (usize, usize, BTreeMap<&str, usize>)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.disclosure) {
        let Some(action) = r.action.as_deref() else { continue };
        let Some(spec) = registry.indicator(&r.indicator_id) else {
            continue;
        };
        let Some(theme) = themes.categories.get(&spec.category) else {
            continue;
        };
        for a in split_actions(action) {
            let entry = per_theme.entry(theme.as_str()).or_default();
            entry.0 += 1;
            match themes.normalize(theme, a) {
                Some(p) => *entry.2.entry(p).or_default() += 1,
                None => entry.1 += 1,
            }
        }
    }
    per_theme
        .into_iter()
        .map(|(theme, (n, unmapped, counts))| {
            let mut entries: Vec<TermShare> = counts
                .into_iter()
                .map(|(p, c)| TermShare {
                    phrase: p.to_string(),
                    count: c,
                    share: c as f64 / n as f64,
                })
                .collect();
            entries.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.phrase.cmp(&b.phrase)));
            entries.truncate(top_n);
            TermFrequencyTable {
                theme: theme.to_string(),
                n_actions: n,
                unmapped,
                entries,
            }
        })
        .collect()
}

fn to_csv<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("row serializes");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
}

/// Columns: scope, n_companies, env_rate, soc_rate, overall_rate, tier, env_tier, soc_tier.
pub fn disclosure_csv(stats: &[DisclosureStats]) -> String {
    to_csv(stats)
}

/// Columns: doc_id, industry, scope1_intensity, scope2_intensity (blank when absent).
pub fn intensity_csv(stats: &[IntensityStat]) -> String {
    to_csv(stats)
}

/// Columns: theme, rank, phrase, count, share.
pub fn frequency_csv(tables: &[TermFrequencyTable]) -> String {
    #[derive(Serialize)]
    struct Row<'a> {
        theme: &'a str,
        rank: usize,
        phrase: &'a str,
        count: usize,
        share: f64,
    }
    let rows: Vec<Row> = tables
        .iter()
        .flat_map(|t| {
            t.entries.iter().enumerate().map(move |(i, e)| Row {
                theme: &t.theme,
                rank: i + 1,
                phrase: &e.phrase,
                count: e.count,
                share: e.share,
            })
        })
        .collect();
    to_csv(&rows)
}
