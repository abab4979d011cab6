use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{extract_document, ExtractConfig, ExtractionRecord, Providers};
use crate::docmodel::StructuredDocument;
use crate::kb::{Chunking, EmbeddingProvider, KbConfig, KbError, KnowledgeBase, SummaryProvider};
use crate::metadata::MetadataRegistry;

use super::{
    aggregate, evaluate_document, fmt_pct, AggregateReport, DocumentFailure, EvalError, EvalOptions, LabelSet,
    UnitAliases,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationArm {
    Benchmark,
    EnhancedRag,
    EnhancedRagKnowledge,
}

impl AblationArm {
    pub const ALL: [AblationArm; 3] = [
        AblationArm::Benchmark,
        AblationArm::EnhancedRag,
        AblationArm::EnhancedRagKnowledge,
    ];

    pub fn id(self) -> &'static str {
        match self {
            AblationArm::Benchmark => "benchmark",
            AblationArm::EnhancedRag => "enhanced_rag",
            AblationArm::EnhancedRagKnowledge => "enhanced_rag_knowledge",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.id() == id)
    }

    pub fn config(self) -> AblationConfig {
        let (s, r, k) = match self {
            AblationArm::Benchmark => (false, false, false),
            AblationArm::EnhancedRag => (true, true, false),
            AblationArm::EnhancedRagKnowledge => (true, true, true),
        };
        AblationConfig {
            config_id: self.id().to_string(),
            use_structured_preprocessing: s,
            use_enhanced_retrieval: r,
            use_knowledge: k,
        }
    }
}

/// One pipeline variant. Without structured preprocessing the text is cut
/// into fixed windows; without enhanced retrieval only the text index is
/// searched and nothing is reranked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub config_id: String,
    pub use_structured_preprocessing: bool,
    pub use_enhanced_retrieval: bool,
    pub use_knowledge: bool,
}

impl AblationConfig {
    pub fn kb_config(&self, structured: &KbConfig, naive_window: usize) -> KbConfig {
        if self.use_structured_preprocessing {
            *structured
        } else {
            KbConfig {
                chunking: Chunking::Naive {
                    window_chars: naive_window,
                },
                ..*structured
            }
        }
    }
}

/// Supplies knowledge bases to the ablation runner, so callers can cache
/// them between arms and runs.
pub trait KbSource: Sync {
    fn kb(&self, doc: &StructuredDocument, cfg: &KbConfig) -> Result<Arc<KnowledgeBase>, KbError>;
}

/// Builds bases in memory, once per (document, config).
pub struct InMemoryKbs<'a> {
    pub embedder: &'a dyn EmbeddingProvider,
    pub summarizer: &'a dyn SummaryProvider,
    cache: Mutex<HashMap<(String, String), Arc<KnowledgeBase>>>,
}

impl<'a> InMemoryKbs<'a> {
    pub fn new(embedder: &'a dyn EmbeddingProvider, summarizer: &'a dyn SummaryProvider) -> Self {
        InMemoryKbs {
            embedder,
            summarizer,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl KbSource for InMemoryKbs<'_> {
    fn kb(&self, doc: &StructuredDocument, cfg: &KbConfig) -> Result<Arc<KnowledgeBase>, KbError> {
        let key = (
            doc.doc_id.clone(),
            serde_json::to_string(cfg).expect("config serializes"),
        );
        if let Some(kb) = self.cache.lock().expect("kb cache").get(&key) {
            return Ok(kb.clone());
        }
        let kb = Arc::new(KnowledgeBase::build(doc, self.embedder, self.summarizer, cfg)?);
        self.cache.lock().expect("kb cache").insert(key, kb.clone());
        Ok(kb)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationOutcome {
    pub reports: Vec<AggregateReport>,
    /// Records of each arm, in arm order.
    pub records: Vec<(String, Vec<ExtractionRecord>)>,
}

/// Run the whole pipeline once per configuration and evaluate each run.
/// Documents that fail are listed in the arm's report; the run continues.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    corpus: &[StructuredDocument],
    registry: &MetadataRegistry,
    labels: &[LabelSet],
    configs: &[AblationConfig],
    providers: Providers<'_>,
    kbs: &dyn KbSource,
    structured: &KbConfig,
    naive_window: usize,
    extract: &ExtractConfig,
    aliases: &UnitAliases,
    opts: &EvalOptions,
) -> Result<AblationOutcome, EvalError> {
    let by_doc: HashMap<&str, &LabelSet> = labels.iter().map(|l| (l.doc_id.as_str(), l)).collect();
    for doc in corpus {
        let l = by_doc
            .get(doc.doc_id.as_str())
            .ok_or_else(|| EvalError::MissingLabels(doc.doc_id.clone()))?;
        l.validate(registry)?;
    }

    let mut outcome = AblationOutcome {
        reports: Vec::new(),
        records: Vec::new(),
    };
    for arm in configs {
        log::info!("ablation arm {}", arm.config_id);
        let kb_cfg = arm.kb_config(structured, naive_window);
        let arm_providers = Providers {
            reranker: if arm.use_enhanced_retrieval {
                providers.reranker
            } else {
                None
            },
            ..providers
        };
        let cfg = ExtractConfig {
            use_knowledge: arm.use_knowledge,
            ..*extract
        };
        let results: Vec<Result<_, DocumentFailure>> = corpus
            .par_iter()
            .map(|doc| {
                let fail = |e: String| DocumentFailure {
                    doc_id: doc.doc_id.clone(),
                    error: e,
                };
                let kb = kbs.kb(doc, &kb_cfg).map_err(|e| fail(e.to_string()))?;
                let kb = if arm.use_enhanced_retrieval {
                    kb
                } else {
                    Arc::new(kb.text_only())
                };
                let out = extract_document(&doc.doc_id, &kb, registry, arm_providers, &cfg)
                    .map_err(|e| fail(e.to_string()))?;
                let report = evaluate_document(by_doc[doc.doc_id.as_str()], &out.records, registry, aliases, opts)
                    .map_err(|e| fail(e.to_string()))?;
                Ok((out.records, report))
            })
            .collect();
        let (mut records, mut docs, mut failures) = (Vec::new(), Vec::new(), Vec::new());
        for r in results {
            match r {
                Ok((recs, report)) => {
                    records.extend(recs);
                    docs.push(report);
                }
                Err(f) => failures.push(f),
            }
        }
        crate::agent::sort_records(&mut records);
        let report = if docs.is_empty() {
            AggregateReport {
                config_id: arm.config_id.clone(),
                provider: providers.chat.name().to_string(),
                n_docs: 0,
                acc_dc: 0.0,
                acc_de: None,
                disclosed_recall: None,
                documents: Vec::new(),
                failures,
            }
        } else {
            aggregate(&arm.config_id, providers.chat.name(), docs, failures)?
        };
        outcome.reports.push(report);
        outcome.records.push((arm.config_id.clone(), records));
    }
    Ok(outcome)
}

/// One row per configuration: config, Acc_DC, Acc_DE, N docs.
pub fn comparison_table(reports: &[AggregateReport]) -> String {
    let mut out = format!("{:<24} {:>8} {:>8} {:>6}\n", "config", "Acc_DC", "Acc_DE", "N docs");
    for r in reports {
        out.push_str(&format!(
            "{:<24} {:>8} {:>8} {:>6}\n",
            r.config_id,
            fmt_pct(Some(r.acc_dc)),
            fmt_pct(r.acc_de),
            r.n_docs
        ));
    }
    out
}
