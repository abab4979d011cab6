//! Metadata-driven retrieval: query vectors from the indicator's question
//! and search terms, exact cosine search per knowledge-base partition,
//! rerank of the leading hits, and budgeted evidence assembly.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{table_key, Anchor, EmbeddingProvider, Entry, KnowledgeBase, Source};
use crate::metadata::{IndicatorSpec, MetadataError, MetadataRegistry};
use crate::provider::{HttpEndpoint, JsonClient, ProviderError};
use crate::text::{char_len, tokenize, truncate_chars};

pub const MIN_BUDGET_CHARS: usize = 500;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("cosine similarity undefined for a zero-norm vector")]
    ZeroNorm,
    #[error("vector length {found} does not match {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Metadata(#[from] MetadataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    /// Hits kept per partition and query vector.
    pub k: usize,
    /// Leading hits passed to the reranker.
    pub m: usize,
    pub budget_chars: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k: 5,
            m: 10,
            budget_chars: 6000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub indicator_id: String,
    /// Rendered question first, then each search term.
    pub query_texts: Vec<String>,
    pub vectors: Vec<Vec<f32>>,
}

pub fn build_query(
    spec: &IndicatorSpec,
    registry: &MetadataRegistry,
    embedder: &dyn EmbeddingProvider,
) -> Result<Query, RetrievalError> {
    let mut query_texts = vec![registry.render_question(spec)?];
    query_texts.extend(spec.search_terms.iter().cloned());
    let vectors = embedder.embed(&query_texts)?;
    crate::kb::check_embeddings(embedder, query_texts.len(), &vectors)?;
    Ok(Query {
        indicator_id: spec.id.clone(),
        query_texts,
        vectors,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHit {
    pub entry_id: String,
    pub source: Source,
    pub similarity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rerank_score: Option<f64>,
    /// Chunk text, outline path, or the whole rendered table for keyword hits.
    pub resolved_payload: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    /// Table this hit resolves to, used to drop duplicate tables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub indicator_id: String,
    pub hits: Vec<ScoredHit>,
    pub total_chars: usize,
    /// The only hit was cut to fit the budget.
    pub truncated: bool,
}

pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64, RetrievalError> {
    if a.len() != b.len() {
        return Err(RetrievalError::DimMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(RetrievalError::ZeroNorm);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

fn by_score_then_id(a: &(f64, &Entry), b: &(f64, &Entry)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.entry_id.cmp(&b.1.entry_id))
}

fn resolve(kb: &KnowledgeBase, entry: &Entry, similarity: f64) -> ScoredHit {
    let (payload, table) = match (&entry.source, &entry.anchor) {
        (Source::TableKeyword, Anchor::Table { table_id }) => (
            kb.table_text(entry).unwrap_or(&entry.payload_text).to_string(),
            Some(table_key(&entry.doc_id, table_id)),
        ),
        _ => (entry.payload_text.clone(), None),
    };
    ScoredHit {
        entry_id: entry.entry_id.clone(),
        source: entry.source,
        similarity,
        rerank_score: None,
        resolved_payload: payload,
        summary: entry.summary.clone(),
        table,
    }
}

/// Exact search. For each partition and each query vector the top `k`
/// entries by cosine are kept; the union is scored by the best similarity
/// over all query vectors and ordered by score, then entry id. Entries or
/// queries with a zero vector have no defined similarity and are skipped.
pub fn search(kb: &KnowledgeBase, query: &Query, k: usize) -> Result<Vec<ScoredHit>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    for v in &query.vectors {
        if v.len() != kb.dim {
            return Err(RetrievalError::DimMismatch {
                expected: kb.dim,
                found: v.len(),
            });
        }
    }
    let mut best: BTreeMap<&str, (f64, &Entry)> = BTreeMap::new();
    for source in Source::ALL {
        let entries = kb.partition(source);
        // sims[q][e]: None where undefined
        let sims: Vec<Vec<Option<f64>>> = query
            .vectors
            .iter()
            .map(|q| entries.iter().map(|e| cosine(q, &e.vector).ok()).collect())
            .collect();
        let mut selected = BTreeSet::new();
        for row in &sims {
            let mut scored: Vec<(f64, &Entry)> =
                row.iter().zip(entries).filter_map(|(s, e)| s.map(|s| (s, e))).collect();
            scored.sort_by(by_score_then_id);
            selected.extend(scored.iter().take(k).map(|(_, e)| e.entry_id.as_str()));
        }
        for (i, e) in entries.iter().enumerate() {
            if !selected.contains(e.entry_id.as_str()) {
                continue;
            }
            let score = sims.iter().filter_map(|row| row[i]).fold(f64::NEG_INFINITY, f64::max);
            best.insert(&e.entry_id, (score, e));
        }
    }
    let mut ranked: Vec<(f64, &Entry)> = best.into_values().collect();
    ranked.sort_by(by_score_then_id);
    Ok(ranked.into_iter().map(|(s, e)| resolve(kb, e, s)).collect())
}

/// Scores (query, candidate) pairs; higher is more relevant.
pub trait Reranker: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, query: &str, candidates: &[String]) -> Result<Vec<f64>, ProviderError>;
}

/// Offline reranker: Jaccard overlap of lowercased token sets.
#[derive(Debug, Clone, Copy, Default)]
pub struct JaccardReranker;

pub fn jaccard(a: &str, b: &str) -> f64 {
    let a: HashSet<String> = tokenize(a).into_iter().collect();
    let b: HashSet<String> = tokenize(b).into_iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        0.0
    } else {
        a.intersection(&b).count() as f64 / union as f64
    }
}

impl Reranker for JaccardReranker {
    fn name(&self) -> &str {
        "jaccard"
    }

    fn score(&self, query: &str, candidates: &[String]) -> Result<Vec<f64>, ProviderError> {
        Ok(candidates.iter().map(|c| jaccard(query, c)).collect())
    }
}

#[derive(Serialize)]
struct RerankRequest<'a> {
    query: &'a str,
    candidates: &'a [String],
}

#[derive(Deserialize)]
struct RerankResponse {
    scores: Vec<f64>,
}

/// Remote reranker: POST `{"query", "candidates": [...]}` → `{"scores": [...]}`.
#[derive(Debug, Clone)]
pub struct HttpReranker {
    client: JsonClient,
}

impl HttpReranker {
    pub fn new(name: impl Into<String>, endpoint: HttpEndpoint) -> Self {
        HttpReranker {
            client: JsonClient::new(name, endpoint),
        }
    }
}

impl Reranker for HttpReranker {
    fn name(&self) -> &str {
        self.client.name()
    }

    fn score(&self, query: &str, candidates: &[String]) -> Result<Vec<f64>, ProviderError> {
        let resp: RerankResponse = self.client.post(&RerankRequest { query, candidates })?;
        if resp.scores.len() != candidates.len() {
            return Err(ProviderError::invalid(
                self.name(),
                format!("{} scores for {} candidates", resp.scores.len(), candidates.len()),
            ));
        }
        if resp.scores.iter().any(|s| !s.is_finite()) {
            return Err(ProviderError::invalid(self.name(), "non-finite score"));
        }
        Ok(resp.scores)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reranked {
    pub hits: Vec<ScoredHit>,
    /// Name of the reranker whose scores were used.
    pub reranker: String,
    pub fallback_used: bool,
}

/// Rescore the first `m` hits and stable-sort them by rerank score; the
/// rest follow in their original order. A failing reranker is replaced by
/// [`JaccardReranker`].
pub fn rerank(mut hits: Vec<ScoredHit>, query_text: &str, reranker: &dyn Reranker, m: usize) -> Reranked {
    let m = m.min(hits.len());
    if m == 0 {
        return Reranked {
            hits,
            reranker: reranker.name().to_string(),
            fallback_used: false,
        };
    }
    let candidates: Vec<String> = hits[..m].iter().map(|h| h.resolved_payload.clone()).collect();
    let (scores, name, fallback_used) = match reranker.score(query_text, &candidates) {
        Ok(s) if s.len() == m => (s, reranker.name().to_string(), false),
        other => {
            match other {
                Err(e) => log::warn!("reranker failed, using token overlap: {e}"),
                Ok(s) => log::warn!(
                    "reranker returned {} scores for {m} candidates, using token overlap",
                    s.len()
                ),
            }
            let fallback = JaccardReranker;
            let s = fallback.score(query_text, &candidates).expect("offline reranker");
            (s, fallback.name().to_string(), true)
        }
    };
    for (h, s) in hits.iter_mut().zip(scores) {
        h.rerank_score = Some(s);
    }
    hits[..m].sort_by(|a, b| {
        b.rerank_score
            .unwrap_or_default()
            .total_cmp(&a.rerank_score.unwrap_or_default())
    });
    Reranked {
        hits,
        reranker: name,
        fallback_used,
    }
}

/// Take hits in order while the running character total stays within
/// `budget_chars` (clamped to at least [`MIN_BUDGET_CHARS`]), skipping
/// repeats of a table already taken. If even the first hit is too long it
/// is truncated to the budget and the bundle is flagged.
pub fn assemble_evidence(indicator_id: &str, hits: &[ScoredHit], budget_chars: usize) -> EvidenceBundle {
    let budget = budget_chars.max(MIN_BUDGET_CHARS);
    let mut out = EvidenceBundle {
        indicator_id: indicator_id.to_string(),
        hits: Vec::new(),
        total_chars: 0,
        truncated: false,
    };
    let mut tables = HashSet::new();
    for h in hits {
        if let Some(t) = &h.table {
            if !tables.insert(t.as_str()) {
                continue;
            }
        }
        let len = char_len(&h.resolved_payload);
        if out.total_chars + len > budget {
            if out.hits.is_empty() {
                let mut cut = h.clone();
                cut.resolved_payload = truncate_chars(&h.resolved_payload, budget).to_string();
                out.total_chars = char_len(&cut.resolved_payload);
                out.hits.push(cut);
                out.truncated = true;
            }
            break;
        }
        out.total_chars += len;
        out.hits.push(h.clone());
    }
    out
}

/// Audit record of one indicator's retrieval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalTrace {
    pub indicator_id: String,
    pub query_texts: Vec<String>,
    pub hits: Vec<ScoredHit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reranker: Option<String>,
    pub rerank_fallback: bool,
    pub evidence_ids: Vec<String>,
    pub total_chars: usize,
    pub truncated: bool,
}

/// Query, search, optional rerank, and evidence assembly for one indicator.
pub fn retrieve(
    kb: &KnowledgeBase,
    spec: &IndicatorSpec,
    registry: &MetadataRegistry,
    embedder: &dyn EmbeddingProvider,
    reranker: Option<&dyn Reranker>,
    cfg: &RetrievalConfig,
) -> Result<(EvidenceBundle, RetrievalTrace), RetrievalError> {
    let query = build_query(spec, registry, embedder)?;
    let mut hits = search(kb, &query, cfg.k)?;
    let (mut reranker_name, mut fallback) = (None, false);
    if let Some(r) = reranker {
        let out = rerank(hits, &query.query_texts[0], r, cfg.m);
        hits = out.hits;
        reranker_name = Some(out.reranker);
        fallback = out.fallback_used;
    }
    let bundle = assemble_evidence(&spec.id, &hits, cfg.budget_chars);
    let trace = RetrievalTrace {
        indicator_id: spec.id.clone(),
        query_texts: query.query_texts,
        hits,
        reranker: reranker_name,
        rerank_fallback: fallback,
        evidence_ids: bundle.hits.iter().map(|h| h.entry_id.clone()).collect(),
        total_chars: bundle.total_chars,
        truncated: bundle.truncated,
    };
    Ok((bundle, trace))
}
