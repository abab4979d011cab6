//! Prompting and answer extraction.
//!
//! For each indicator a five-part prompt is assembled (preset, reference
//! content, expert knowledge, question, answer format), sent to a chat
//! provider, and the reply parsed into [`ExtractionRecord`]s. Provider text
//! is untrusted: parsing never fails, and every problem is recorded as a
//! [`Flag`] on the record.

mod chat;
mod parse;

use std::collections::HashSet;
use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{EmbeddingProvider, KnowledgeBase, Source};
use crate::metadata::{IndicatorKind, IndicatorSpec, MetadataRegistry, RECORD_SCHEMA_ID};
use crate::provider::with_retries;
use crate::retrieval::{retrieve, EvidenceBundle, Reranker, RetrievalConfig, RetrievalError, RetrievalTrace};

pub use chat::{
    ChatProvider, ChatRequest, GenerationParams, HttpChat, Message, MockFixture, MockProvider, MockReply, MOCK_REFUSAL,
};
pub use parse::{is_refusal, negative_record, parse_reply, EXCERPT_CHARS, REFUSAL_PATTERNS};

pub const NO_EVIDENCE: &str = "NO EVIDENCE FOUND";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// No answer object could be found in the reply.
    ParseFailure,
    /// The reply was a recognized negative answer.
    Refusal,
    /// The provider failed on every attempt.
    ProviderFailed,
    /// Disclosed numerical record without a value.
    MissingValue,
    /// Disclosed numerical record without a unit.
    MissingUnit,
    /// The value was not a number.
    UnparsedValue,
    /// The value was a range; its first number was kept.
    ValueRange,
    /// A topic the indicator does not ask for.
    UnknownTopic,
    /// A requested topic the reply did not cover.
    MissingTopic,
    /// The reply gave no topic; it was assigned by position.
    TopicInferred,
    /// A negative answer carried payload fields, which were dropped.
    PayloadCleared,
    /// Some other field did not validate.
    ValidationWarning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionRecord {
    pub doc_id: String,
    pub indicator_id: String,
    pub disclosure: bool,
    pub kpi: String,
    pub topic: String,
    #[serde(with = "crate::value::opt_decimal", default)]
    pub value: Option<Decimal>,
    #[serde(default)]
    pub unit: Option<String>,
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub action: Option<String>,
    pub raw_reply_excerpt: String,
    #[serde(default)]
    pub flags: Vec<Flag>,
}

impl ExtractionRecord {
    pub fn has(&self, flag: Flag) -> bool {
        self.flags.contains(&flag)
    }
}

/// Problems with one record; empty when it is valid.
pub fn validate_record(r: &ExtractionRecord, spec: &IndicatorSpec) -> Vec<String> {
    let mut out = Vec::new();
    if r.indicator_id != spec.id {
        out.push(format!("record for `{}` checked against `{}`", r.indicator_id, spec.id));
    }
    if !r.disclosure && (r.value.is_some() || r.unit.is_some() || r.target.is_some() || r.action.is_some()) {
        out.push("undisclosed record carries payload fields".into());
    }
    if r.disclosure && spec.kind == IndicatorKind::Numerical {
        if r.value.is_none() && !r.has(Flag::MissingValue) {
            out.push("disclosed numerical record without value".into());
        }
        if r.unit.is_none() && !r.has(Flag::MissingUnit) {
            out.push("disclosed numerical record without unit".into());
        }
    }
    if !spec.topics.contains(&r.topic) && !r.has(Flag::UnknownTopic) {
        out.push(format!("unrequested topic `{}` not flagged", r.topic));
    }
    out
}

/// Validate every record against the registry and check that
/// (doc_id, indicator_id, topic) is unique.
pub fn validate_records(records: &[ExtractionRecord], registry: &MetadataRegistry) -> Result<(), String> {
    let mut keys = HashSet::new();
    for r in records {
        let spec = registry
            .indicator(&r.indicator_id)
            .ok_or_else(|| format!("record for unknown indicator `{}`", r.indicator_id))?;
        let problems = validate_record(r, spec);
        if !problems.is_empty() {
            return Err(format!(
                "{}/{}/{}: {}",
                r.doc_id,
                r.indicator_id,
                r.topic,
                problems.join("; ")
            ));
        }
        if !keys.insert((&r.doc_id, &r.indicator_id, &r.topic)) {
            return Err(format!("duplicate record {}/{}/{}", r.doc_id, r.indicator_id, r.topic));
        }
    }
    Ok(())
}

pub fn sort_records(records: &mut [ExtractionRecord]) {
    records.sort_by(|a, b| (&a.doc_id, &a.indicator_id, &a.topic).cmp(&(&b.doc_id, &b.indicator_id, &b.topic)));
}

/// One JSON object per line.
pub fn records_to_jsonl(records: &[ExtractionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn records_from_jsonl(text: &str) -> Result<Vec<ExtractionRecord>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

pub fn write_records(path: &Path, records: &[ExtractionRecord]) -> std::io::Result<()> {
    crate::fsutil::write_atomic(path, records_to_jsonl(records).as_bytes())
}

pub fn read_records(path: &Path) -> Result<Vec<ExtractionRecord>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    records_from_jsonl(&text).map_err(|e| format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub preset: String,
    pub reference_content: String,
    /// Empty when knowledge injection is off.
    pub expert_knowledge: String,
    pub question: String,
    pub answer_format: String,
}

impl Prompt {
    fn sections(&self) -> Vec<(&'static str, &str)> {
        let mut s = vec![("Reference Content", self.reference_content.as_str())];
        if !self.expert_knowledge.is_empty() {
            s.push(("Expert Knowledge", self.expert_knowledge.as_str()));
        }
        s.push(("Question", self.question.as_str()));
        s.push(("Answer Format", self.answer_format.as_str()));
        s
    }

    /// Whole prompt as one text, parts in fixed order.
    pub fn render(&self) -> String {
        let mut out = format!("## Preset Information\n{}\n", self.preset);
        for (title, body) in self.sections() {
            out.push_str(&format!("\n## {title}\n{body}\n"));
        }
        out
    }

    /// System message with the preset, user message with the rest.
    pub fn messages(&self) -> Vec<Message> {
        let user = self
            .sections()
            .into_iter()
            .map(|(title, body)| format!("## {title}\n{body}\n"))
            .collect::<Vec<_>>()
            .join("\n");
        vec![
            Message {
                role: "system".into(),
                content: self.preset.clone(),
            },
            Message {
                role: "user".into(),
                content: user,
            },
        ]
    }
}

fn source_label(s: Source) -> &'static str {
    match s {
        Source::Text => "text",
        Source::Outline => "outline",
        Source::TableKeyword => "table",
    }
}

pub fn render_reference(evidence: &EvidenceBundle) -> String {
    if evidence.hits.is_empty() {
        return NO_EVIDENCE.to_string();
    }
    evidence
        .hits
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let mut s = format!("[{}] ({}) {}\n", i + 1, source_label(h.source), h.entry_id);
            if let Some(sum) = h
                .summary
                .as_deref()
                .filter(|s| !s.is_empty() && *s != h.resolved_payload)
            {
                s.push_str(&format!("Summary: {sum}\n"));
            }
            s.push_str(&h.resolved_payload);
            s
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Instructions for the machine-readable answer.
pub fn render_answer_format(schema_id: &str, spec: &IndicatorSpec) -> String {
    debug_assert_eq!(schema_id, RECORD_SCHEMA_ID);
    let topics = spec
        .topics
        .iter()
        .map(|t| format!("\"{t}\""))
        .collect::<Vec<_>>()
        .join(", ");
    format!(
        "Reply with one JSON object of the form {{\"records\": [...]}} holding one object per topic ({topics}). \
         Each object has exactly these fields: \"disclosure\" (true if the report discloses the topic, otherwise false), \
         \"kpi\", \"topic\", \"value\" (the number as stated in the report, or null), \"unit\" (or null), \
         \"target\" (a stated target, or null) and \"action\" (a stated measure or action, or null)."
    )
}

pub fn build_prompt(
    spec: &IndicatorSpec,
    evidence: &EvidenceBundle,
    registry: &MetadataRegistry,
    knowledge_enabled: bool,
) -> Result<Prompt, AgentError> {
    debug_assert_eq!(evidence.indicator_id, spec.id);
    let expr = registry
        .expression(&spec.prompt_template_id)
        .ok_or_else(|| AgentError::Config(format!("no prompt expression `{}`", spec.prompt_template_id)))?;
    Ok(Prompt {
        preset: expr.preset.clone(),
        reference_content: render_reference(evidence),
        expert_knowledge: if knowledge_enabled {
            spec.knowledge.clone()
        } else {
            String::new()
        },
        question: registry
            .render_question(spec)
            .map_err(|e| AgentError::Config(e.to_string()))?,
        answer_format: render_answer_format(&spec.output_schema_id, spec),
    })
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractConfig {
    pub retrieval: RetrievalConfig,
    pub use_knowledge: bool,
    /// Extra attempts after a retryable provider failure.
    pub retries: u32,
    pub retry_base_delay_ms: u64,
    pub params: GenerationParams,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            retrieval: RetrievalConfig::default(),
            use_knowledge: true,
            retries: 2,
            retry_base_delay_ms: 500,
            params: GenerationParams::default(),
        }
    }
}

#[derive(Clone, Copy)]
pub struct Providers<'a> {
    pub embedder: &'a dyn EmbeddingProvider,
    /// `None` skips the rerank stage.
    pub reranker: Option<&'a dyn Reranker>,
    pub chat: &'a dyn ChatProvider,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorOutput {
    pub records: Vec<ExtractionRecord>,
    pub trace: Option<RetrievalTrace>,
}

fn provider_failed(doc_id: &str, spec: &IndicatorSpec, message: &str) -> Vec<ExtractionRecord> {
    let mut r = negative_record(spec, message, Flag::ProviderFailed);
    r.doc_id = doc_id.to_string();
    vec![r]
}

/// Retrieval, prompt, provider call and parsing for one indicator. Provider
/// failures degrade to a flagged negative record; only configuration
/// problems are errors.
pub fn extract_indicator(
    doc_id: &str,
    spec: &IndicatorSpec,
    kb: &KnowledgeBase,
    registry: &MetadataRegistry,
    providers: Providers<'_>,
    cfg: &ExtractConfig,
) -> Result<IndicatorOutput, AgentError> {
    let (evidence, trace) = match retrieve(
        kb,
        spec,
        registry,
        providers.embedder,
        providers.reranker,
        &cfg.retrieval,
    ) {
        Ok(v) => v,
        Err(RetrievalError::Provider(e)) => {
            log::warn!("{doc_id}/{}: query embedding failed: {e}", spec.id);
            return Ok(IndicatorOutput {
                records: provider_failed(doc_id, spec, &e.to_string()),
                trace: None,
            });
        }
        Err(e) => return Err(AgentError::Config(format!("{doc_id}/{}: {e}", spec.id))),
    };
    let prompt = build_prompt(spec, &evidence, registry, cfg.use_knowledge)?;
    let req = ChatRequest {
        doc_id,
        indicator_id: &spec.id,
        prompt: &prompt,
        params: &cfg.params,
    };
    let reply = with_retries(cfg.retries, Duration::from_millis(cfg.retry_base_delay_ms), || {
        providers.chat.complete(&req)
    });
    let records = match reply {
        Ok(text) => {
            let mut recs = parse_reply(&text, spec);
            for r in &mut recs {
                r.doc_id = doc_id.to_string();
            }
            recs
        }
        Err(e) => {
            log::warn!("{doc_id}/{}: chat provider failed: {e}", spec.id);
            provider_failed(doc_id, spec, &e.to_string())
        }
    };
    Ok(IndicatorOutput {
        records,
        trace: Some(trace),
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DocumentExtraction {
    /// Sorted by (doc_id, indicator_id, topic).
    pub records: Vec<ExtractionRecord>,
    /// In registry order.
    pub traces: Vec<RetrievalTrace>,
}

/// Extract every registry indicator from one document, in parallel on the
/// current rayon pool. Output order does not depend on scheduling.
pub fn extract_document(
    doc_id: &str,
    kb: &KnowledgeBase,
    registry: &MetadataRegistry,
    providers: Providers<'_>,
    cfg: &ExtractConfig,
) -> Result<DocumentExtraction, AgentError> {
    let outputs = registry
        .indicators
        .par_iter()
        .map(|spec| extract_indicator(doc_id, spec, kb, registry, providers, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = DocumentExtraction::default();
    for o in outputs {
        out.records.extend(o.records);
        out.traces.extend(o.trace);
    }
    sort_records(&mut out.records);
    validate_records(&out.records, registry).map_err(|e| AgentError::Config(format!("emitted invalid record: {e}")))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::docmodel::parse_markdown;
    use crate::kb::{HashedBagEmbedder, KbConfig, LeadSentences};
    use crate::provider::ProviderError;
    use crate::retrieval::{JaccardReranker, ScoredHit};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn registry() -> MetadataRegistry {
        MetadataRegistry::bundled_hkex()
    }

    fn bundle(id: &str, payloads: &[&str]) -> EvidenceBundle {
        EvidenceBundle {
            indicator_id: id.into(),
            hits: payloads
                .iter()
                .enumerate()
                .map(|(i, p)| ScoredHit {
                    entry_id: format!("d:text:{i:05}"),
                    source: Source::Text,
                    similarity: 0.5,
                    rerank_score: None,
                    resolved_payload: p.to_string(),
                    summary: None,
                    table: None,
                })
                .collect(),
            total_chars: payloads.iter().map(|p| p.len()).sum(),
            truncated: false,
        }
    }

    #[test]
    fn prompt_parts_and_knowledge_toggle() {
        let reg = registry();
        let spec = reg.indicator("A1.3").unwrap();
        let ev = bundle("A1.3", &["Hazardous waste: 12 tonnes.", "General refuse: 40 tonnes."]);
        let p = build_prompt(spec, &ev, &reg, true).unwrap();
        assert_eq!(p.expert_knowledge, spec.knowledge);
        let text = p.render();
        let order: Vec<usize> = [
            "Preset Information",
            "Reference Content",
            "Expert Knowledge",
            "Question",
            "Answer Format",
        ]
        .iter()
        .map(|s| text.find(s).unwrap())
        .collect();
        assert!(order.windows(2).all(|w| w[0] < w[1]));
        assert!(text.contains(&spec.knowledge));

        let p = build_prompt(spec, &ev, &reg, false).unwrap();
        assert_eq!(p.expert_knowledge, "");
        assert!(!p.render().contains(&spec.knowledge));
    }

    #[test]
    fn empty_evidence_uses_sentinel() {
        let reg = registry();
        let spec = reg.indicator("A1.1").unwrap();
        let p = build_prompt(spec, &bundle("A1.1", &[]), &reg, true).unwrap();
        assert_eq!(p.reference_content, NO_EVIDENCE);
    }

    struct Dead(AtomicUsize);

    impl ChatProvider for Dead {
        fn name(&self) -> &str {
            "dead"
        }
        fn complete(&self, _: &ChatRequest<'_>) -> Result<String, ProviderError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Err(ProviderError::Timeout {
                provider: "dead".into(),
            })
        }
    }

    fn kb() -> KnowledgeBase {
        let doc = parse_markdown("# Waste\n\nHazardous waste produced was 12 tonnes in 2022.\n", "doc1").unwrap();
        KnowledgeBase::build(
            &doc,
            &HashedBagEmbedder::default(),
            &LeadSentences::default(),
            &KbConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn exhausted_provider_yields_flagged_record() {
        let reg = registry();
        let spec = reg.indicator("A1.3").unwrap();
        let dead = Dead(AtomicUsize::new(0));
        let embedder = HashedBagEmbedder::default();
        let providers = Providers {
            embedder: &embedder,
            reranker: None,
            chat: &dead,
        };
        let cfg = ExtractConfig {
            retries: 2,
            retry_base_delay_ms: 0,
            ..Default::default()
        };
        let out = extract_indicator("doc1", spec, &kb(), &reg, providers, &cfg).unwrap();
        assert_eq!(dead.0.load(Ordering::SeqCst), 3);
        assert_eq!(out.records.len(), 1);
        assert!(!out.records[0].disclosure);
        assert_eq!(out.records[0].flags, vec![Flag::ProviderFailed]);
    }

    #[test]
    fn mock_answers_planted_tuple_and_refuses_otherwise() {
        let reg = registry();
        let spec = reg.indicator("A1.3").unwrap();
        let reply = r#"{"records": [{"disclosure": true, "topic": "Hazardous Waste", "value": 12, "unit": "tonnes"}, {"disclosure": false, "topic": "Non-hazardous Waste"}]}"#;
        let mock = MockProvider::new(MockFixture {
            name: "mock".into(),
            replies: vec![MockReply {
                doc_id: "doc1".into(),
                indicator_id: "A1.3".into(),
                reply: reply.into(),
                grounding: vec!["12 tonnes".into()],
                fallback: None,
            }],
        })
        .unwrap();
        let embedder = HashedBagEmbedder::default();
        let providers = Providers {
            embedder: &embedder,
            reranker: Some(&JaccardReranker),
            chat: &mock,
        };
        let kb = kb();
        let out = extract_indicator("doc1", spec, &kb, &reg, providers, &ExtractConfig::default()).unwrap();
        assert_eq!(out.records[0].value, Some(Decimal::from(12)));
        assert_eq!(out.records[0].doc_id, "doc1");

        let other = reg.indicator("A1.1").unwrap();
        let out = extract_indicator("doc1", other, &kb, &reg, providers, &ExtractConfig::default()).unwrap();
        assert!(out.records.iter().all(|r| !r.disclosure));
        assert!(out.records[0].has(Flag::Refusal));
    }

    #[test]
    fn grounding_failure_gives_fallback() {
        let mock = MockProvider::new(MockFixture {
            name: "mock".into(),
            replies: vec![MockReply {
                doc_id: "d".into(),
                indicator_id: "i".into(),
                reply: "yes".into(),
                grounding: vec!["needle".into()],
                fallback: Some("no".into()),
            }],
        })
        .unwrap();
        let p = |r: &str| Prompt {
            preset: "p".into(),
            reference_content: r.into(),
            expert_knowledge: String::new(),
            question: "q".into(),
            answer_format: "a".into(),
        };
        let params = GenerationParams::default();
        let ask = |prompt: &Prompt| {
            mock.complete(&ChatRequest {
                doc_id: "d",
                indicator_id: "i",
                prompt,
                params: &params,
            })
            .unwrap()
        };
        assert_eq!(ask(&p("has needle")), "yes");
        assert_eq!(ask(&p("hay only")), "no");
    }

    #[test]
    fn document_extraction_covers_registry_and_validates() {
        let reg = registry();
        let mock = MockProvider::new(MockFixture {
            name: "mock".into(),
            replies: vec![],
        })
        .unwrap();
        let embedder = HashedBagEmbedder::default();
        let providers = Providers {
            embedder: &embedder,
            reranker: None,
            chat: &mock,
        };
        let out = extract_document("doc1", &kb(), &reg, providers, &ExtractConfig::default()).unwrap();
        let ids: HashSet<_> = out.records.iter().map(|r| r.indicator_id.as_str()).collect();
        assert_eq!(ids.len(), reg.len());
        assert_eq!(out.traces.len(), reg.len());
        let text = records_to_jsonl(&out.records);
        assert_eq!(records_from_jsonl(&text).unwrap(), out.records);
    }
}
