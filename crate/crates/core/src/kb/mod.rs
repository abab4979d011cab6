//! Multi-type knowledge base.
//!
//! Each report is indexed three ways: text chunks (with summaries), outline
//! paths, and table keywords. Table keywords map one-to-many onto their
//! table, so a hit on any keyword retrieves the whole table. Every entry
//! carries a vector from one embedding provider; the base is persisted as a
//! single versioned JSON file.

mod chunk;
mod embed;
mod summary;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::docmodel::{render_table, StructuredDocument, Table};
use crate::provider::ProviderError;
use crate::text::char_len;

pub use chunk::{chunk_text, naive_chunks, naive_text, Chunk, MIN_CHUNK_CHARS};
pub use embed::{check_embeddings, EmbeddingProvider, HashedBagEmbedder, HttpEmbedder, DEFAULT_DIM};
pub use summary::{summarize, LeadSentences, Summary, SummaryProvider, DEFAULT_LEAD_SENTENCES};

pub const KB_FORMAT: &str = "esgx-kb";
pub const KB_VERSION: u32 = 1;
pub const DEFAULT_MAX_CHARS: usize = 1200;
pub const DEFAULT_NAIVE_WINDOW: usize = 500;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("embedding provider failed: {0}")]
    Provider(#[from] ProviderError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed knowledge base file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported knowledge base {format} version {found} (expected {KB_FORMAT} version {KB_VERSION})")]
    Version { format: String, found: u32 },
    #[error("invalid knowledge base: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Text,
    Outline,
    TableKeyword,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Text, Source::Outline, Source::TableKeyword];
}

/// Where an entry came from in its source document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Anchor {
    /// Inclusive range of paragraph blocks.
    Blocks {
        first: usize,
        last: usize,
    },
    /// Child-index path from the outline root.
    Outline {
        path: Vec<usize>,
    },
    Table {
        table_id: String,
    },
    /// Character range of the plain document text (fixed-window chunking).
    Chars {
        start: usize,
        end: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub entry_id: String,
    pub source: Source,
    pub doc_id: String,
    /// Chunk text, outline path or table keyword.
    pub payload_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    pub vector: Vec<f32>,
    pub anchor: Anchor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Chunking {
    /// Block-aware chunks plus outline and table-keyword indices.
    Structured { max_chars: usize },
    /// Fixed character windows over the flattened text; text index only.
    Naive { window_chars: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KbConfig {
    pub chunking: Chunking,
    pub summary_sentences: usize,
    pub embed_batch: usize,
}

impl Default for KbConfig {
    fn default() -> Self {
        KbConfig {
            chunking: Chunking::Structured {
                max_chars: DEFAULT_MAX_CHARS,
            },
            summary_sentences: DEFAULT_LEAD_SENTENCES,
            embed_batch: 64,
        }
    }
}

impl KbConfig {
    pub fn naive(window_chars: usize) -> Self {
        KbConfig {
            chunking: Chunking::Naive { window_chars },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.chunking {
            Chunking::Structured { max_chars } if max_chars < MIN_CHUNK_CHARS => {
                Err(format!("max_chars must be >= {MIN_CHUNK_CHARS}, got {max_chars}"))
            }
            Chunking::Naive { window_chars: 0 } => Err("window_chars must be positive".into()),
            _ if self.embed_batch == 0 => Err("embed_batch must be positive".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KbScope {
    Document(String),
    Corpus(Vec<String>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub text: usize,
    pub outline: usize,
    pub table_keyword: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub format: String,
    pub version: u32,
    pub scope: KbScope,
    pub provider: String,
    pub dim: usize,
    pub config: KbConfig,
    pub counts: Counts,
    /// Summaries that fell back to lead sentences during the build.
    pub summary_fallbacks: usize,
    /// Rendered table text keyed by [`table_key`].
    pub tables: BTreeMap<String, String>,
    pub text: Vec<Entry>,
    pub outline: Vec<Entry>,
    pub table_keyword: Vec<Entry>,
}

/// Key of a table in [`KnowledgeBase::tables`].
pub fn table_key(doc_id: &str, table_id: &str) -> String {
    format!("{doc_id}#{table_id}")
}

fn is_numeric_cell(cell: &str) -> bool {
    cell.chars().any(|c| c.is_ascii_digit())
        && cell
            .chars()
            .all(|c| c.is_ascii_digit() || matches!(c, '.' | ',' | '-' | '+' | '%' | ' ' | '(' | ')'))
}

/// Keywords that stand in for a table in the keyword index: every header
/// cell, then the first-column cell of every body row, trimmed, without
/// blanks, purely numeric cells or duplicates.
pub fn extract_table_keywords(table: &Table) -> Vec<String> {
    let header = table.cells.iter().take(table.header_row_count).flatten();
    let first_col = table
        .cells
        .iter()
        .skip(table.header_row_count)
        .filter_map(|row| row.first());
    let mut seen = BTreeSet::new();
    header
        .chain(first_col)
        .map(|c| c.trim())
        .filter(|c| !c.is_empty() && !is_numeric_cell(c))
        .filter(|c| seen.insert(c.to_string()))
        .map(str::to_string)
        .collect()
}

fn outline_path(titles: &[&str]) -> String {
    titles.join(" > ")
}

struct Pending {
    source: Source,
    entry_id: String,
    payload: String,
    summary: Option<String>,
    anchor: Anchor,
}

fn embed_all(embedder: &dyn EmbeddingProvider, texts: &[String], batch: usize) -> Result<Vec<Vec<f32>>, ProviderError> {
    let batches: Vec<Vec<Vec<f32>>> = texts
        .par_chunks(batch)
        .map(|b| {
            let v = embedder.embed(b)?;
            check_embeddings(embedder, b.len(), &v)?;
            Ok(v)
        })
        .collect::<Result<_, ProviderError>>()?;
    Ok(batches.into_iter().flatten().collect())
}

impl KnowledgeBase {
    /// Index one document. Fails without side effects if the embedder fails.
    pub fn build(
        doc: &StructuredDocument,
        embedder: &dyn EmbeddingProvider,
        summarizer: &dyn SummaryProvider,
        cfg: &KbConfig,
    ) -> Result<KnowledgeBase, KbError> {
        cfg.validate().map_err(KbError::Invalid)?;
        let id = &doc.doc_id;
        let mut pending = Vec::new();
        let mut summary_fallbacks = 0;
        let mut tables = BTreeMap::new();
        match cfg.chunking {
            Chunking::Structured { max_chars } => {
                for (i, c) in chunk_text(doc, max_chars).into_iter().enumerate() {
                    let s = summarize(&c.text, summarizer, cfg.summary_sentences);
                    summary_fallbacks += usize::from(s.fallback_used);
                    pending.push(Pending {
                        source: Source::Text,
                        entry_id: format!("{id}:text:{i:05}"),
                        payload: c.text,
                        summary: Some(s.text),
                        anchor: c.anchor,
                    });
                }
                for (i, (path, titles, _)) in doc.outline.walk().into_iter().enumerate() {
                    pending.push(Pending {
                        source: Source::Outline,
                        entry_id: format!("{id}:outline:{i:05}"),
                        payload: outline_path(&titles),
                        summary: None,
                        anchor: Anchor::Outline { path },
                    });
                }
                for t in &doc.tables {
                    tables.insert(table_key(id, &t.table_id), render_table(t));
                    for (k, kw) in extract_table_keywords(t).into_iter().enumerate() {
                        pending.push(Pending {
                            source: Source::TableKeyword,
                            entry_id: format!("{id}:table:{}:{k:03}", t.table_id),
                            payload: kw,
                            summary: None,
                            anchor: Anchor::Table {
                                table_id: t.table_id.clone(),
                            },
                        });
                    }
                }
            }
            Chunking::Naive { window_chars } => {
                for (i, c) in naive_chunks(doc, window_chars).into_iter().enumerate() {
                    pending.push(Pending {
                        source: Source::Text,
                        entry_id: format!("{id}:text:{i:05}"),
                        payload: c.text,
                        summary: None,
                        anchor: c.anchor,
                    });
                }
            }
        }

        let texts: Vec<String> = pending.iter().map(|p| p.payload.clone()).collect();
        let vectors = embed_all(embedder, &texts, cfg.embed_batch)?;

        let mut kb = KnowledgeBase {
            format: KB_FORMAT.into(),
            version: KB_VERSION,
            scope: KbScope::Document(id.clone()),
            provider: embedder.name().to_string(),
            dim: embedder.dim(),
            config: *cfg,
            counts: Counts::default(),
            summary_fallbacks,
            tables,
            text: Vec::new(),
            outline: Vec::new(),
            table_keyword: Vec::new(),
        };
        for (p, vector) in pending.into_iter().zip(vectors) {
            let entry = Entry {
                entry_id: p.entry_id,
                source: p.source,
                doc_id: id.clone(),
                payload_text: p.payload,
                summary: p.summary,
                vector,
                anchor: p.anchor,
            };
            kb.partition_mut(entry.source).push(entry);
        }
        kb.counts = kb.recount();
        kb.check()?;
        Ok(kb)
    }

    pub fn partition(&self, source: Source) -> &[Entry] {
        match source {
            Source::Text => &self.text,
            Source::Outline => &self.outline,
            Source::TableKeyword => &self.table_keyword,
        }
    }

    fn partition_mut(&mut self, source: Source) -> &mut Vec<Entry> {
        match source {
            Source::Text => &mut self.text,
            Source::Outline => &mut self.outline,
            Source::TableKeyword => &mut self.table_keyword,
        }
    }

    /// Copy holding only the text partition (single-index retrieval).
    pub fn text_only(&self) -> KnowledgeBase {
        let mut kb = KnowledgeBase {
            outline: Vec::new(),
            table_keyword: Vec::new(),
            tables: BTreeMap::new(),
            ..self.clone()
        };
        kb.counts = kb.recount();
        kb
    }

    pub fn entries(&self) -> impl Iterator<Item = &Entry> {
        self.text.iter().chain(&self.outline).chain(&self.table_keyword)
    }

    pub fn len(&self) -> usize {
        self.text.len() + self.outline.len() + self.table_keyword.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn recount(&self) -> Counts {
        Counts {
            text: self.text.len(),
            outline: self.outline.len(),
            table_keyword: self.table_keyword.len(),
        }
    }

    /// Rendered text of the table an entry points at, if any.
    pub fn table_text(&self, entry: &Entry) -> Option<&str> {
        match &entry.anchor {
            Anchor::Table { table_id } => self.tables.get(&table_key(&entry.doc_id, table_id)).map(String::as_str),
            _ => None,
        }
    }

    /// Structural checks: format/version, partitions, dims, unique ids,
    /// counts and table payloads.
    pub fn check(&self) -> Result<(), KbError> {
        if self.format != KB_FORMAT || self.version != KB_VERSION {
            return Err(KbError::Version {
                format: self.format.clone(),
                found: self.version,
            });
        }
        let mut ids = BTreeSet::new();
        for source in Source::ALL {
            for e in self.partition(source) {
                if e.source != source {
                    return Err(KbError::Invalid(format!("`{}` filed under {source:?}", e.entry_id)));
                }
                if e.vector.len() != self.dim {
                    return Err(KbError::Invalid(format!(
                        "`{}` has dim {} (expected {})",
                        e.entry_id,
                        e.vector.len(),
                        self.dim
                    )));
                }
                if !ids.insert(e.entry_id.as_str()) {
                    return Err(KbError::Invalid(format!("duplicate entry id `{}`", e.entry_id)));
                }
                if source == Source::TableKeyword && self.table_text(e).is_none() {
                    return Err(KbError::Invalid(format!("`{}` points at a missing table", e.entry_id)));
                }
            }
        }
        if self.counts != self.recount() {
            return Err(KbError::Invalid("header counts disagree with entries".into()));
        }
        Ok(())
    }

    /// Confirm every anchor resolves to a live location in `doc`.
    pub fn verify_anchors(&self, doc: &StructuredDocument) -> Result<(), String> {
        let text_len = char_len(&naive_text(doc));
        for e in self.entries().filter(|e| e.doc_id == doc.doc_id) {
            let ok = match &e.anchor {
                Anchor::Blocks { first, last } => first <= last && *last < doc.blocks.len(),
                Anchor::Outline { path } => !path.is_empty() && doc.outline.node_at(path).is_some(),
                Anchor::Table { table_id } => doc.table(table_id).is_some(),
                Anchor::Chars { start, end } => start < end && *end <= text_len,
            };
            if !ok {
                return Err(format!("anchor {:?} of `{}` does not resolve", e.anchor, e.entry_id));
            }
        }
        Ok(())
    }

    /// Combine per-document bases built with the same provider and config.
    pub fn merge(kbs: Vec<KnowledgeBase>) -> Result<KnowledgeBase, KbError> {
        let mut iter = kbs.into_iter();
        let mut out = iter.next().ok_or_else(|| KbError::Invalid("nothing to merge".into()))?;
        let mut doc_ids = match &out.scope {
            KbScope::Document(d) => vec![d.clone()],
            KbScope::Corpus(ds) => ds.clone(),
        };
        for kb in iter {
            if kb.provider != out.provider || kb.dim != out.dim || kb.config != out.config {
                return Err(KbError::Invalid(format!(
                    "cannot merge bases built with {}/{} and {}/{}",
                    out.provider, out.dim, kb.provider, kb.dim
                )));
            }
            match kb.scope {
                KbScope::Document(d) => doc_ids.push(d),
                KbScope::Corpus(ds) => doc_ids.extend(ds),
            }
            out.summary_fallbacks += kb.summary_fallbacks;
            out.tables.extend(kb.tables);
            out.text.extend(kb.text);
            out.outline.extend(kb.outline);
            out.table_keyword.extend(kb.table_keyword);
        }
        out.scope = KbScope::Corpus(doc_ids);
        out.counts = out.recount();
        out.check()?;
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("knowledge base serializes")
    }

    pub fn from_json(text: &str) -> Result<KnowledgeBase, KbError> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
        }
        let header: Header = serde_json::from_str(text)?;
        if header.format != KB_FORMAT || header.version != KB_VERSION {
            return Err(KbError::Version {
                format: header.format,
                found: header.version,
            });
        }
        let kb: KnowledgeBase = serde_json::from_str(text)?;
        kb.check()?;
        Ok(kb)
    }

    /// Write atomically: a temp file in the target directory, then rename.
    pub fn save(&self, path: &Path) -> Result<(), KbError> {
        crate::fsutil::write_atomic(path, self.to_json().as_bytes()).map_err(|source| KbError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<KnowledgeBase, KbError> {
        let text = std::fs::read_to_string(path).map_err(|source| KbError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// Build a base and persist it; nothing is written if the build fails.
pub fn build_and_save(
    doc: &StructuredDocument,
    embedder: &dyn EmbeddingProvider,
    summarizer: &dyn SummaryProvider,
    cfg: &KbConfig,
    path: &Path,
) -> Result<KnowledgeBase, KbError> {
    let kb = KnowledgeBase::build(doc, embedder, summarizer, cfg)?;
    kb.save(path)?;
    Ok(kb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::docmodel::parse_markdown;

    const MD: &str = "# Environmental\n\nWe track emissions across all sites. Scope 1 rose slightly.\n\n## Emissions\n\nDetails follow in the table below.\n\n| Metric | 2022 |\n|---|---|\n| Scope 1 (tCO2e) | 12.5 |\n| Scope 2 (tCO2e) | 30 |\n\n# Social\n\nHeadcount grew.\n";

    fn doc() -> StructuredDocument {
        parse_markdown(MD, "doc1").unwrap()
    }

    struct Failing;

    impl EmbeddingProvider for Failing {
        fn name(&self) -> &str {
            "failing"
        }
        fn dim(&self) -> usize {
            4
        }
        fn embed(&self, _: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
            Err(ProviderError::Timeout {
                provider: "failing".into(),
            })
        }
    }

    #[test]
    fn keywords_are_header_and_first_column() {
        let d = doc();
        assert_eq!(
            extract_table_keywords(&d.tables[0]),
            vec!["Metric", "Scope 1 (tCO2e)", "Scope 2 (tCO2e)"]
        );
    }

    fn table(cells: &[&[&str]], header_row_count: usize) -> Table {
        Table {
            table_id: "t".into(),
            n_rows: cells.len(),
            n_cols: cells[0].len(),
            cells: cells
                .iter()
                .map(|r| r.iter().map(|c| c.to_string()).collect())
                .collect(),
            header_row_count,
        }
    }

    #[test]
    fn year_header_is_numeric_and_dropped() {
        let t = table(&[&["Metric", "2022"], &["Scope 1", "12.5"]], 1);
        assert_eq!(extract_table_keywords(&t), vec!["Metric", "Scope 1"]);
        assert!(extract_table_keywords(&table(&[&["1", "2"], &["3.5", "4%"]], 1)).is_empty());
        assert_eq!(extract_table_keywords(&table(&[&["Energy"]], 1)), vec!["Energy"]);
    }

    #[test]
    fn numeric_cells_are_not_keywords() {
        let t = Table {
            table_id: "t".into(),
            n_rows: 2,
            n_cols: 2,
            cells: vec![vec!["Item".into(), "Value".into()], vec!["1,200".into(), "x".into()]],
            header_row_count: 1,
        };
        assert_eq!(extract_table_keywords(&t), vec!["Item", "Value"]);
    }

    #[test]
    fn structured_build_fills_all_partitions() {
        let d = doc();
        let kb = KnowledgeBase::build(
            &d,
            &HashedBagEmbedder::default(),
            &LeadSentences::default(),
            &KbConfig::default(),
        )
        .unwrap();
        assert_eq!(kb.counts.outline, 3);
        assert_eq!(kb.counts.table_keyword, 3);
        assert!(kb.counts.text >= 1);
        assert_eq!(kb.outline[1].payload_text, "Environmental > Emissions");
        let kw = &kb.table_keyword[2];
        assert_eq!(kw.entry_id, "doc1:table:t1:002");
        assert_eq!(kw.payload_text, "Scope 2 (tCO2e)");
        assert!(kb.table_text(kw).unwrap().contains("Scope 1 (tCO2e) | 12.5"));
        assert!(kb.text[0].summary.is_some());
        kb.verify_anchors(&d).unwrap();
    }

    #[test]
    fn naive_build_has_text_only() {
        let d = doc();
        let kb = KnowledgeBase::build(
            &d,
            &HashedBagEmbedder::default(),
            &LeadSentences::default(),
            &KbConfig::naive(40),
        )
        .unwrap();
        assert!(kb.outline.is_empty() && kb.table_keyword.is_empty());
        assert!(kb.text.iter().all(|e| char_len(&e.payload_text) <= 40));
        kb.verify_anchors(&d).unwrap();
    }

    #[test]
    fn save_load_round_trip_and_version_check() {
        let d = doc();
        let kb = KnowledgeBase::build(
            &d,
            &HashedBagEmbedder::default(),
            &LeadSentences::default(),
            &KbConfig::default(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("kb.json");
        kb.save(&p).unwrap();
        assert_eq!(KnowledgeBase::load(&p).unwrap(), kb);

        let bumped = kb.to_json().replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(
            KnowledgeBase::from_json(&bumped),
            Err(KbError::Version { found: 2, .. })
        ));
    }

    #[test]
    fn provider_failure_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("kb.json");
        let err = build_and_save(&doc(), &Failing, &LeadSentences::default(), &KbConfig::default(), &p).unwrap_err();
        assert!(matches!(err, KbError::Provider(_)));
        assert!(!p.exists());
    }

    #[test]
    fn merge_requires_matching_provider() {
        let d = doc();
        let a = KnowledgeBase::build(
            &d,
            &HashedBagEmbedder::new(8),
            &LeadSentences::default(),
            &KbConfig::default(),
        )
        .unwrap();
        let mut d2 = d.clone();
        d2.doc_id = "doc2".into();
        let b = KnowledgeBase::build(
            &d2,
            &HashedBagEmbedder::new(8),
            &LeadSentences::default(),
            &KbConfig::default(),
        )
        .unwrap();
        let c = KnowledgeBase::build(
            &d2,
            &HashedBagEmbedder::new(16),
            &LeadSentences::default(),
            &KbConfig::default(),
        )
        .unwrap();
        let merged = KnowledgeBase::merge(vec![a.clone(), b.clone()]).unwrap();
        assert_eq!(merged.len(), a.len() + b.len());
        assert_eq!(merged.scope, KbScope::Corpus(vec!["doc1".into(), "doc2".into()]));
        assert!(KnowledgeBase::merge(vec![a, c]).is_err());
    }
}
