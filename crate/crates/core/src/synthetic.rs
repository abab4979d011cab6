//! Seeded synthetic corpus with known answers.
//!
//! Each document plants the disclosed indicators as tables (numerical) or
//! short paragraphs (textual) and comes with disclosure and value labels and
//! a mock fixture whose replies are grounded on the planted strings. Two
//! features make the ablation arms separable:
//!
//! * Scope 2 emissions are planted in kilograms while labeled in tonnes; the
//!   grounded reply needs the indicator's knowledge text, and the fallback
//!   reply repeats the kilogram figure.
//! * A glossary paragraph is padded until the Scope 1 table row straddles a
//!   fixed-window boundary of the plain-text rendering, so no naive chunk
//!   holds the whole row.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rust_decimal::Decimal;
use serde_json::{json, Map, Value};

use crate::agent::{MockFixture, MockReply};
use crate::docmodel::parse_markdown;
use crate::eval::{labels_to_jsonl, LabelSet, ValueLabel};
use crate::kb::naive_text;
use crate::metadata::{Category, IndicatorKind, IndicatorSpec, MetadataRegistry, Quantity};

pub const DEFAULT_SEED: u64 = 20_231_231;
pub const DEFAULT_DOCS: usize = 10;
pub const SCOPE1_ID: &str = "A1.2-S1";
pub const SCOPE2_ID: &str = "A1.2-S2";
pub const MOCK_NAME: &str = "synthetic-mock";

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDoc {
    pub doc_id: String,
    pub markdown: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub documents: Vec<SyntheticDoc>,
    pub labels: Vec<LabelSet>,
    pub mock: MockFixture,
}

impl SyntheticCorpus {
    /// Relative path and content of every output file.
    pub fn files(&self) -> Vec<(PathBuf, String)> {
        let mut out: Vec<(PathBuf, String)> = self
            .documents
            .iter()
            .map(|d| (Path::new("docs").join(format!("{}.md", d.doc_id)), d.markdown.clone()))
            .collect();
        out.push((PathBuf::from("labels.jsonl"), labels_to_jsonl(&self.labels)));
        let mut mock = serde_json::to_string_pretty(&self.mock).expect("fixture serializes");
        mock.push('\n');
        out.push((PathBuf::from("mock_replies.json"), mock));
        out
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for (rel, content) in self.files() {
            let path = dir.join(rel);
            crate::fsutil::write_atomic(&path, content.as_bytes())?;
            written.push(path);
        }
        Ok(written)
    }
}

const COMPANIES: &[(&str, &str)] = &[
    ("Harbourview Holdings Limited", "Property"),
    ("Jade Peak Utilities Limited", "Utilities"),
    ("Lotus Bay Consumer Group", "Consumer Goods"),
    ("Kowloon Crest Properties Limited", "Property"),
    ("Silver Junk Logistics Limited", "Industrials"),
    ("Victoria Tide Energy Holdings", "Utilities"),
    ("Pearl Delta Foods Limited", "Consumer Goods"),
    ("Lion Rock Financial Group", "Financials"),
    ("Tai Ping Textiles Limited", "Consumer Goods"),
    ("Cheung Hill Technology Limited", "Industrials"),
];

const FILLER: &[&str] = &[
    "This report covers the financial year ended 31 December 2023.",
    "The Group operates offices and facilities in several cities across the region.",
    "Figures are presented on the same basis as in the previous year unless stated otherwise.",
    "Management reviews the information in this section at least once a year.",
    "The Group values open communication with shareholders, customers and business partners.",
    "Our operations continued to grow during the year in line with the business plan.",
    "Further details are available on the corporate website.",
    "The information in this section was collected from operating units through internal questionnaires.",
    "We will continue to review our practices as the business evolves.",
    "Feedback on this report is welcome through the investor relations department.",
    "The Group aims to create long-term value for its stakeholders.",
    "Responsibilities are assigned to the relevant departments and reviewed by senior management.",
    "Comparative figures have been restated where the basis of preparation changed.",
    "The Group engaged an independent consultant to assist in preparing this section.",
];

const GLOSSARY: &[&str] = &[
    "issuer",
    "subsidiary",
    "reporting period",
    "board",
    "committee",
    "stakeholder",
    "director",
    "headcount",
    "contractor",
    "facility",
    "operating unit",
    "benchmark",
    "baseline",
    "scope",
];

const GOVERNANCE_ACTIONS: &[&str] = &[
    "establishing an ESG working group",
    "quarterly ESG progress reviews",
    "linking executive pay to ESG targets",
    "annual integrity briefings for directors",
];

/// Unit, lower bound, upper bound and decimal places of each planted value.
fn value_spec(id: &str) -> (&'static str, i64, i64, u32) {
    match id {
        "A1.1" => ("kg", 50, 90_000, 1),
        "A1.2-S1" => ("tCO2e", 100, 60_000, 1),
        "A1.2-INT" => ("tCO2e/employee", 1, 400, 2),
        "A1.3" => ("tonnes", 10, 9_000, 1),
        "A1.3-INT" => ("tonnes/employee", 1, 300, 2),
        "A2.1" => ("MWh", 100, 90_000, 0),
        "A2.1-INT" => ("MWh/employee", 1, 900, 2),
        "A2.2" => ("m3", 1_000, 900_000, 0),
        "A2.2-INT" => ("m3/employee", 1, 900, 1),
        "A2.5" => ("tonnes", 5, 5_000, 1),
        "A2.5-INT" => ("kg/unit", 1, 500, 2),
        "B1.2-GEN" | "B1.2-AGE" | "B1.2-REG" | "B3.1-GEN" | "B3.1-CAT" | "B6.1" | "G-INED" | "G-FEM" | "G-ATT" => {
            ("%", 1, 1000, 1)
        }
        "B2.1" | "B6.2" | "B7.1" => ("cases", 0, 40, 0),
        "B2.2" => ("days", 0, 900, 0),
        "B3.2-GEN" | "B3.2-CAT" => ("hours", 10, 800, 1),
        "B5.1" => ("suppliers", 5, 900, 0),
        "B8.2" => ("HKD", 10_000, 9_000_000, 0),
        "G-MEET" => ("meetings", 4, 13, 0),
        id if id.starts_with("B1.1") => ("persons", 20, 6_000, 0),
        _ => ("units", 1, 10_000, 0),
    }
}

/// Thousands separators on the integer part.
fn group_thousands(d: &Decimal) -> String {
    let s = d.to_string();
    let (sign, s) = s.strip_prefix('-').map_or(("", s.as_str()), |r| ("-", r));
    let (int, frac) = s.split_once('.').map_or((s, None), |(i, f)| (i, Some(f)));
    let mut out = String::new();
    for (i, c) in int.chars().enumerate() {
        if i > 0 && (int.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    match frac {
        Some(f) => format!("{sign}{out}.{f}"),
        None => format!("{sign}{out}"),
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

fn lower_first(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_lowercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

fn fillers(rng: &mut ChaCha8Rng, n: usize) -> String {
    FILLER.choose_multiple(rng, n).copied().collect::<Vec<_>>().join(" ")
}

struct PlantedTable {
    category: Category,
    markdown: String,
    rows: Vec<String>,
}

struct Builder<'a> {
    rng: ChaCha8Rng,
    registry: &'a MetadataRegistry,
    themes: BTreeMap<Category, Vec<&'static str>>,
}

fn theme_phrases() -> BTreeMap<Category, Vec<&'static str>> {
    BTreeMap::from([
        (
            Category::E,
            vec![
                "reduce carbon emissions",
                "LED lighting",
                "solar panels",
                "waste recycling",
                "water saving",
                "recyclable packaging",
                "energy-saving equipment",
                "rainwater harvesting",
            ],
        ),
        (
            Category::S,
            vec![
                "staff training",
                "safety inspections",
                "charitable donations",
                "supplier audits",
                "whistleblowing",
                "volunteering",
                "green procurement",
            ],
        ),
        (Category::G, GOVERNANCE_ACTIONS.to_vec()),
    ])
}

/// Reply JSON in one of a few shapes a chat model might produce.
fn render_reply(rng: &mut ChaCha8Rng, records: Vec<Value>) -> String {
    let body = if records.len() == 1 && rng.gen_bool(0.5) {
        serde_json::to_string_pretty(&records[0])
    } else {
        serde_json::to_string_pretty(&json!({ "records": records }))
    }
    .expect("reply serializes");
    match rng.gen_range(0..3) {
        0 => body,
        1 => format!("```json\n{body}\n```"),
        _ => format!("Based on the reference content, the answer is:\n{body}"),
    }
}

fn record_value(spec: &IndicatorSpec, topic: &str, disclosed: bool) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("disclosure".into(), Value::Bool(disclosed));
    m.insert("kpi".into(), Value::String(spec.kpi.clone()));
    m.insert("topic".into(), Value::String(topic.to_string()));
    m
}

impl Builder<'_> {
    fn value(&mut self, id: &str) -> Decimal {
        let (_, lo, hi, dp) = value_spec(id);
        let scale = 10i64.pow(dp);
        let raw = self.rng.gen_range(lo * scale..=hi * scale);
        Decimal::new(raw, dp).normalize()
    }

    /// Table for one numerical indicator and its mock reply.
    fn numeric_table(&mut self, spec: &IndicatorSpec, labels: &mut LabelSet) -> (PlantedTable, String) {
        let (unit, ..) = value_spec(&spec.id);
        let title = capitalize(&spec.search_terms[0]);
        let mut md = format!("| {title} | Unit | 2023 |\n|---|---|---|\n");
        let mut rows = Vec::new();
        let mut records = Vec::new();
        let mut topic_labels = BTreeMap::new();
        for topic in &spec.topics {
            let v = self.value(&spec.id);
            let shown = group_thousands(&v);
            md.push_str(&format!("| {topic} | {unit} | {shown} |\n"));
            rows.push(format!("{topic} | {unit} | {shown}"));
            let mut r = record_value(spec, topic, true);
            let (value, unit_field) = match self.rng.gen_range(0..3) {
                0 => (Value::String(shown.clone()), Value::String(unit.into())),
                1 if unit == "%" => (Value::String(format!("{shown}%")), Value::Null),
                1 => (Value::String(format!("{shown} {unit}")), Value::Null),
                _ => (
                    serde_json::from_str::<Value>(&v.to_string()).expect("decimal is valid json"),
                    Value::String(unit.into()),
                ),
            };
            r.insert("value".into(), value);
            r.insert("unit".into(), unit_field);
            records.push(Value::Object(r));
            topic_labels.insert(
                topic.clone(),
                ValueLabel {
                    value: v,
                    unit: unit.to_string(),
                },
            );
        }
        labels.value_labels.insert(spec.id.clone(), topic_labels);
        let reply = render_reply(&mut self.rng, records);
        (
            PlantedTable {
                category: spec.category,
                markdown: md,
                rows,
            },
            reply,
        )
    }

    /// Paragraph for one textual indicator, its grounding sentence and reply.
    fn text_paragraph(&mut self, company: &str, spec: &IndicatorSpec) -> (String, String, String) {
        let terms = &spec.search_terms;
        let second = terms.get(1).unwrap_or(&terms[0]);
        let mut actions: Vec<&str> = Vec::new();
        let lead = match spec.quantity {
            Quantity::KeyActions => {
                let pool = &self.themes[&spec.category];
                let n = self.rng.gen_range(1..=2);
                actions = pool.choose_multiple(&mut self.rng, n).copied().collect();
                format!(
                    "On {} and {}, {company} took the following steps during the year: {}.",
                    terms[0],
                    second,
                    actions.join("; ")
                )
            }
            _ => format!(
                "On {} and {}, {company} follows written policies approved by the board and reviewed every year.",
                terms[0], second
            ),
        };
        let kpi = spec.kpi.trim_end_matches('.');
        let n = self.rng.gen_range(1..=2);
        let para = format!(
            "{lead} This section addresses {}. {}",
            lower_first(kpi),
            fillers(&mut self.rng, n)
        );
        let records: Vec<Value> = spec
            .topics
            .iter()
            .map(|t| {
                let mut r = record_value(spec, t, true);
                r.insert("value".into(), Value::Null);
                r.insert("unit".into(), Value::Null);
                if spec.quantity == Quantity::KeyActions {
                    r.insert("action".into(), Value::String(actions.join("; ")));
                }
                Value::Object(r)
            })
            .collect();
        let reply = render_reply(&mut self.rng, records);
        (para, lead, reply)
    }

    fn disclosed(&mut self, spec: &IndicatorSpec) -> bool {
        if spec.id == SCOPE1_ID || spec.id == SCOPE2_ID {
            return true;
        }
        let p = match (spec.category, spec.kind) {
            (Category::G, _) => 0.8,
            (_, IndicatorKind::Numerical) => 0.7,
            (_, IndicatorKind::Textual) => 0.75,
        };
        self.rng.gen_bool(p)
    }

    fn document(&mut self, index: usize, naive_window: usize) -> (SyntheticDoc, LabelSet, Vec<MockReply>) {
        let doc_id = format!("synth-{:02}", index + 1);
        let (company, industry) = COMPANIES[index % COMPANIES.len()];
        let company = if index < COMPANIES.len() {
            company.to_string()
        } else {
            format!("{company} ({})", index / COMPANIES.len() + 1)
        };
        let cap = self.rng.gen_range(800..60_000) * 10;

        let mut labels = LabelSet {
            doc_id: doc_id.clone(),
            disclosure_labels: BTreeMap::new(),
            value_labels: BTreeMap::new(),
        };
        let mut mock = Vec::new();
        let mut sections: BTreeMap<Category, Vec<(String, Vec<String>)>> = BTreeMap::new();
        let mut tables: Vec<PlantedTable> = Vec::new();

        let specs: Vec<IndicatorSpec> = self.registry.indicators.clone();
        for spec in &specs {
            let on = self.disclosed(spec);
            labels.disclosure_labels.insert(spec.id.clone(), on);
            if !on {
                continue;
            }
            let mut reply = MockReply {
                doc_id: doc_id.clone(),
                indicator_id: spec.id.clone(),
                reply: String::new(),
                grounding: Vec::new(),
                fallback: None,
            };
            if spec.id == SCOPE2_ID {
                let para = self.scope2(&company, spec, &mut labels, &mut reply);
                push_paragraph(&mut sections, spec, para);
            } else if spec.kind == IndicatorKind::Numerical {
                let (table, r) = self.numeric_table(spec, &mut labels);
                reply.reply = r;
                reply.grounding = table.rows.clone();
                tables.push(table);
            } else {
                let (para, lead, r) = self.text_paragraph(&company, spec);
                reply.reply = r;
                reply.grounding = vec![lead];
                push_paragraph(&mut sections, spec, para);
            }
            mock.push(reply);
        }

        let mut head = format!("---\ndoc_id: {doc_id}\ncompany: {company}\nindustry: {industry}\n");
        if index % 7 != 6 {
            head.push_str(&format!("market_cap_mhkd: {cap}\n"));
        }
        head.push_str("---\n\n");
        let mut body = format!("# About this Report\n\n{}\n\n", fillers(&mut self.rng, 3));
        for (cat, title) in [
            (Category::E, "Environmental"),
            (Category::S, "Social"),
            (Category::G, "Governance"),
        ] {
            body.push_str(&format!("# {title}\n\n"));
            body.push_str(&format!("{}\n\n", fillers(&mut self.rng, 2)));
            for (aspect, paras) in sections.get(&cat).into_iter().flatten() {
                body.push_str(&format!("## {aspect}\n\n"));
                for p in paras {
                    body.push_str(p);
                    body.push_str("\n\n");
                }
            }
        }
        body.push_str("# Performance Data\n\n");
        for (cat, title) in [
            (Category::E, "Environmental Performance"),
            (Category::S, "Social Performance"),
            (Category::G, "Governance Performance"),
        ] {
            let group: Vec<&PlantedTable> = tables.iter().filter(|t| t.category == cat).collect();
            if group.is_empty() {
                continue;
            }
            body.push_str(&format!("## {title}\n\n"));
            for t in group {
                body.push_str(&t.markdown);
                body.push('\n');
            }
        }

        let scope1_row = mock
            .iter()
            .find(|m| m.indicator_id == SCOPE1_ID)
            .map(|m| m.grounding[0].clone())
            .expect("scope 1 is always disclosed");
        let markdown = pad_to_straddle(&doc_id, &head, &body, &scope1_row, naive_window);
        (SyntheticDoc { doc_id, markdown }, labels, mock)
    }

    fn scope2(&mut self, company: &str, spec: &IndicatorSpec, labels: &mut LabelSet, reply: &mut MockReply) -> String {
        let tonnes = self.rng.gen_range(200..40_000);
        let grams = self.rng.gen_range(0..1000);
        let kg = Decimal::from(tonnes * 1000 + grams);
        let t = Decimal::new(tonnes * 1000 + grams, 3).normalize();
        let sentence = format!(
            "Energy indirect greenhouse gas emissions (scope 2 emissions) from purchased electricity totalled {} kg CO2e in 2023.",
            group_thousands(&kg)
        );
        let topic = &spec.topics[0];
        labels.value_labels.insert(
            spec.id.clone(),
            BTreeMap::from([(
                topic.clone(),
                ValueLabel {
                    value: t,
                    unit: "tCO2e".into(),
                },
            )]),
        );
        let mut good = record_value(spec, topic, true);
        good.insert("value".into(), Value::String(group_thousands(&t)));
        good.insert("unit".into(), Value::String("tCO2e".into()));
        let mut raw = record_value(spec, topic, true);
        raw.insert("value".into(), Value::String(group_thousands(&kg)));
        raw.insert("unit".into(), Value::String("kg CO2e".into()));
        reply.reply = render_reply(&mut self.rng, vec![Value::Object(good)]);
        reply.fallback = Some(render_reply(&mut self.rng, vec![Value::Object(raw)]));
        let knowledge_hint = spec
            .knowledge
            .split(';')
            .nth(1)
            .map(|s| s.trim().trim_end_matches('.').to_string())
            .filter(|s| !s.is_empty());
        reply.grounding = std::iter::once(sentence.clone()).chain(knowledge_hint).collect();
        format!(
            "{sentence} {company} purchases electricity from the local grid. {}",
            fillers(&mut self.rng, 1)
        )
    }
}

fn push_paragraph(sections: &mut BTreeMap<Category, Vec<(String, Vec<String>)>>, spec: &IndicatorSpec, para: String) {
    let list = sections.entry(spec.category).or_default();
    match list.iter_mut().find(|(a, _)| *a == spec.aspect) {
        Some((_, paras)) => paras.push(para),
        None => list.push((spec.aspect.clone(), vec![para])),
    }
}

/// Whether `needle` is cut by a `window`-character boundary of `hay`.
pub fn straddles(hay: &str, needle: &str, window: usize) -> bool {
    let Some(byte) = hay.find(needle) else { return false };
    let start = hay[..byte].chars().count();
    let end = start + needle.chars().count();
    start / window != (end - 1) / window
}

/// Append a glossary paragraph, one term at a time, until `row` straddles a
/// naive window boundary.
fn pad_to_straddle(doc_id: &str, head: &str, body: &str, row: &str, window: usize) -> String {
    let mut terms = String::from("Terms used in this report:");
    for i in 0..10 * window {
        let md = format!("{head}{body}# Glossary\n\n{terms}.\n");
        let doc = parse_markdown(&md, doc_id).expect("synthetic markdown parses");
        if straddles(&naive_text(&doc), row, window) {
            return md;
        }
        let sep = if i == 0 { " " } else { ", " };
        terms.push_str(sep);
        terms.push_str(GLOSSARY[i % GLOSSARY.len()]);
    }
    panic!("could not place the scope 1 row across a window boundary");
}

/// Generate `n_docs` documents. Output depends only on the registry, `seed`,
/// `n_docs` and `naive_window`.
pub fn generate(registry: &MetadataRegistry, seed: u64, n_docs: usize, naive_window: usize) -> SyntheticCorpus {
    assert!(registry.indicator(SCOPE1_ID).is_some() && registry.indicator(SCOPE2_ID).is_some());
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        registry,
        themes: theme_phrases(),
    };
    let mut documents = Vec::new();
    let mut labels = Vec::new();
    let mut replies = Vec::new();
    for i in 0..n_docs {
        let (d, l, m) = b.document(i, naive_window);
        documents.push(d);
        labels.push(l);
        replies.extend(m);
    }
    SyntheticCorpus {
        documents,
        labels,
        mock: MockFixture {
            name: MOCK_NAME.into(),
            replies,
        },
    }
}
