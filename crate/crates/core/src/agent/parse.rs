use std::collections::HashSet;

use serde_json::{Map, Value};

use crate::metadata::{IndicatorKind, IndicatorSpec};
use crate::text::truncate_chars;
use crate::value::{decimal_from_json, parse_number};

use super::{ExtractionRecord, Flag};

pub const EXCERPT_CHARS: usize = 300;

/// Phrases that mark a reply as a negative answer rather than a failure.
pub const REFUSAL_PATTERNS: &[&str] = &[
    "cannot find",
    "can't find",
    "could not find",
    "couldn't find",
    "unable to find",
    "unable to locate",
    "not disclosed",
    "no disclosure",
    "does not disclose",
    "doesn't disclose",
    "not mentioned",
    "not provided",
    "not available",
    "no information",
    "no relevant information",
    "no evidence",
    "not reported",
];

pub fn is_refusal(reply: &str) -> bool {
    let lower = reply.to_lowercase().replace('\u{2019}', "'");
    REFUSAL_PATTERNS.iter().any(|p| lower.contains(p))
}

/// First JSON value in `reply` (object or array) that looks like an answer.
fn first_answer(reply: &str) -> Option<Vec<Map<String, Value>>> {
    for (i, c) in reply.char_indices() {
        if c != '{' && c != '[' {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&reply[i..]).into_iter::<Value>();
        if let Some(Ok(v)) = stream.next() {
            if let Some(objs) = answer_objects(v) {
                return Some(objs);
            }
        }
    }
    None
}

fn lower_keys(m: Map<String, Value>) -> Map<String, Value> {
    m.into_iter().map(|(k, v)| (k.trim().to_lowercase(), v)).collect()
}

fn answer_objects(v: Value) -> Option<Vec<Map<String, Value>>> {
    let objs: Vec<Map<String, Value>> = match v {
        Value::Object(m) => {
            let m = lower_keys(m);
            match m.get("records") {
                Some(Value::Array(items)) => items
                    .iter()
                    .filter_map(|x| x.as_object().cloned().map(lower_keys))
                    .collect(),
                _ => vec![m],
            }
        }
        Value::Array(items) => items
            .into_iter()
            .filter_map(|x| match x {
                Value::Object(m) => Some(lower_keys(m)),
                _ => None,
            })
            .collect(),
        _ => return None,
    };
    (!objs.is_empty() && objs.iter().all(|o| o.contains_key("disclosure"))).then_some(objs)
}

fn as_bool(v: Option<&Value>) -> Option<bool> {
    match v? {
        Value::Bool(b) => Some(*b),
        Value::Number(n) => n.as_f64().map(|x| x != 0.0),
        Value::String(s) => match s.trim().to_lowercase().as_str() {
            "true" | "yes" | "y" | "disclosed" | "1" => Some(true),
            "false" | "no" | "n" | "not disclosed" | "0" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

fn as_text(v: Option<&Value>) -> Option<String> {
    let s = match v? {
        Value::Null => return None,
        Value::String(s) => s.trim().to_string(),
        Value::Array(items) => items
            .iter()
            .filter_map(|x| as_text(Some(x)))
            .collect::<Vec<_>>()
            .join("; "),
        other => other.to_string(),
    };
    (!s.is_empty()).then_some(s)
}

fn canonical_topic(spec: &IndicatorSpec, topic: &str) -> Option<String> {
    let t = topic.trim();
    spec.topics.iter().find(|s| s.trim().eq_ignore_ascii_case(t)).cloned()
}

fn base(spec: &IndicatorSpec, topic: String, excerpt: &str) -> ExtractionRecord {
    ExtractionRecord {
        doc_id: String::new(),
        indicator_id: spec.id.clone(),
        disclosure: false,
        kpi: spec.kpi.clone(),
        topic,
        value: None,
        unit: None,
        target: None,
        action: None,
        raw_reply_excerpt: excerpt.to_string(),
        flags: Vec::new(),
    }
}

fn default_topic(spec: &IndicatorSpec) -> String {
    spec.topics.first().cloned().unwrap_or_default()
}

/// A single negative record for a reply that holds no usable answer.
pub fn negative_record(spec: &IndicatorSpec, reply: &str, flag: Flag) -> ExtractionRecord {
    let mut r = base(spec, default_topic(spec), truncate_chars(reply, EXCERPT_CHARS));
    r.flags.push(flag);
    r
}

fn record_from(spec: &IndicatorSpec, obj: &Map<String, Value>, topic: String, excerpt: &str) -> ExtractionRecord {
    let mut r = base(spec, topic, excerpt);
    match as_bool(obj.get("disclosure")) {
        Some(d) => r.disclosure = d,
        None => r.flags.push(Flag::ValidationWarning),
    }
    if let Some(k) = as_text(obj.get("kpi")) {
        r.kpi = k;
    }
    r.unit = as_text(obj.get("unit"));
    r.target = as_text(obj.get("target"));
    r.action = as_text(obj.get("action"));
    match obj.get("value") {
        None | Some(Value::Null) => {}
        Some(Value::Number(n)) => match decimal_from_json(n) {
            Some(v) => r.value = Some(v),
            None => r.flags.push(Flag::UnparsedValue),
        },
        Some(Value::String(s)) if s.trim().is_empty() => {}
        Some(Value::String(s)) => match parse_number(s) {
            Some(p) => {
                r.value = Some(p.value);
                if p.range {
                    r.flags.push(Flag::ValueRange);
                }
                match (&r.unit, p.unit) {
                    (None, Some(u)) => r.unit = Some(u),
                    (Some(given), Some(u)) if u == "%" && given != "%" => {
                        r.flags.push(Flag::ValidationWarning);
                    }
                    _ => {}
                }
            }
            None => r.flags.push(Flag::UnparsedValue),
        },
        Some(_) => r.flags.push(Flag::UnparsedValue),
    }
    enforce_invariants(spec, &mut r);
    r
}

/// Clear payload fields of negative records and flag numerical records
/// that lack a value or unit.
fn enforce_invariants(spec: &IndicatorSpec, r: &mut ExtractionRecord) {
    if !r.disclosure {
        if r.value.is_some() || r.unit.is_some() || r.target.is_some() || r.action.is_some() {
            r.flags.push(Flag::PayloadCleared);
        }
        r.value = None;
        r.unit = None;
        r.target = None;
        r.action = None;
        return;
    }
    if spec.kind == IndicatorKind::Numerical {
        if r.value.is_none() {
            r.flags.push(Flag::MissingValue);
        }
        if r.unit.is_none() {
            r.flags.push(Flag::MissingUnit);
        }
    }
}

/// Turn a model reply into records. Never fails: unusable replies become a
/// single negative record flagged as a refusal or a parse failure.
///
/// The first JSON value shaped like an answer is used: `{"records": [..]}`,
/// an array of objects, or a single object, each object carrying at least
/// `disclosure`. Each requested topic yields one record, in the indicator's
/// topic order; topics the reply skipped become negative records flagged
/// [`Flag::MissingTopic`], and unrequested topics are kept after them,
/// flagged [`Flag::UnknownTopic`].
pub fn parse_reply(reply: &str, spec: &IndicatorSpec) -> Vec<ExtractionRecord> {
    let excerpt = truncate_chars(reply, EXCERPT_CHARS);
    let Some(objs) = first_answer(reply) else {
        let flag = if is_refusal(reply) {
            Flag::Refusal
        } else {
            Flag::ParseFailure
        };
        return vec![negative_record(spec, reply, flag)];
    };

    let mut by_topic: Vec<(String, ExtractionRecord)> = Vec::new();
    let mut unknown: Vec<ExtractionRecord> = Vec::new();
    let mut seen = HashSet::new();
    for (i, obj) in objs.iter().enumerate() {
        let given = as_text(obj.get("topic"));
        let (topic, mut flags) = match &given {
            Some(t) => match canonical_topic(spec, t) {
                Some(c) => (c, vec![]),
                None => (t.clone(), vec![Flag::UnknownTopic]),
            },
            None if spec.topics.len() == 1 => (default_topic(spec), vec![]),
            None => match spec.topics.get(i) {
                Some(t) => (t.clone(), vec![Flag::TopicInferred]),
                None => (format!("#{i}"), vec![Flag::UnknownTopic]),
            },
        };
        if !seen.insert(topic.to_lowercase()) {
            continue;
        }
        let mut r = record_from(spec, obj, topic.clone(), excerpt);
        flags.append(&mut r.flags);
        r.flags = flags;
        if r.flags.contains(&Flag::UnknownTopic) {
            unknown.push(r);
        } else {
            by_topic.push((topic, r));
        }
    }

    let mut out = Vec::with_capacity(spec.topics.len() + unknown.len());
    for t in &spec.topics {
        match by_topic.iter().position(|(k, _)| k == t) {
            Some(p) => out.push(by_topic.swap_remove(p).1),
            None => {
                let mut r = base(spec, t.clone(), excerpt);
                r.flags.push(Flag::MissingTopic);
                out.push(r);
            }
        }
    }
    out.extend(unknown);
    for r in &mut out {
        r.flags.sort();
        r.flags.dedup();
    }
    out
}
