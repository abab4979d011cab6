use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use esgx_core::docmodel::{ingest, StructuredDocument};
use esgx_core::eval::KbSource;
use esgx_core::fsutil::{sha256_file, sha256_hex};
use esgx_core::kb::{EmbeddingProvider, KbConfig, KbError, KnowledgeBase, SummaryProvider};

const EXTENSIONS: &[&str] = &["json", "md", "markdown", "txt"];

pub struct LoadedDoc {
    pub doc: StructuredDocument,
    pub path: PathBuf,
    pub digest: String,
}

pub struct Corpus {
    pub docs: Vec<LoadedDoc>,
    /// (file, error) for reports that could not be ingested.
    pub failures: Vec<(PathBuf, String)>,
}

/// Report files of `dir`, sorted by name.
pub fn list_reports(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Ingest every report. Unreadable reports and duplicate doc ids are
/// recorded as failures; the rest load.
pub fn load(dir: &Path) -> std::io::Result<Corpus> {
    let mut out = Corpus {
        docs: Vec::new(),
        failures: Vec::new(),
    };
    let mut seen = BTreeSet::new();
    for path in list_reports(dir)? {
        let doc = match ingest(&path) {
            Ok(d) => d,
            Err(e) => {
                out.failures.push((path, e.to_string()));
                continue;
            }
        };
        if !seen.insert(doc.doc_id.clone()) {
            out.failures.push((path, format!("duplicate doc_id `{}`", doc.doc_id)));
            continue;
        }
        let digest = sha256_file(&path)?;
        out.docs.push(LoadedDoc { doc, path, digest });
    }
    out.docs.sort_by(|a, b| a.doc.doc_id.cmp(&b.doc.doc_id));
    Ok(out)
}

/// Knowledge bases cached on disk under a key of (document digest,
/// embedder, dimension, KB config). A changed input gives a new key, so
/// stale entries are never read.
pub struct DiskKbs<'a> {
    pub dir: PathBuf,
    pub embedder: &'a dyn EmbeddingProvider,
    pub summarizer: &'a dyn SummaryProvider,
    digests: HashMap<String, String>,
    memo: Mutex<HashMap<PathBuf, Arc<KnowledgeBase>>>,
}

impl<'a> DiskKbs<'a> {
    pub fn new(
        dir: PathBuf,
        corpus: &Corpus,
        embedder: &'a dyn EmbeddingProvider,
        summarizer: &'a dyn SummaryProvider,
    ) -> Self {
        DiskKbs {
            dir,
            embedder,
            summarizer,
            digests: corpus
                .docs
                .iter()
                .map(|d| (d.doc.doc_id.clone(), d.digest.clone()))
                .collect(),
            memo: Mutex::new(HashMap::new()),
        }
    }

    pub fn path_for(&self, doc_id: &str, cfg: &KbConfig) -> PathBuf {
        let key = serde_json::json!({
            "doc": self.digests.get(doc_id),
            "doc_id": doc_id,
            "embedder": self.embedder.name(),
            "dim": self.embedder.dim(),
            "summarizer": self.summarizer.name(),
            "kb": cfg,
        });
        let hash = sha256_hex(key.to_string().as_bytes());
        self.dir.join(format!("{}.kb.json", &hash[..32]))
    }
}

impl KbSource for DiskKbs<'_> {
    fn kb(&self, doc: &StructuredDocument, cfg: &KbConfig) -> Result<Arc<KnowledgeBase>, KbError> {
        let path = self.path_for(&doc.doc_id, cfg);
        if let Some(kb) = self.memo.lock().expect("kb memo").get(&path) {
            return Ok(kb.clone());
        }
        let cached = if path.is_file() {
            match KnowledgeBase::load(&path) {
                Ok(kb) => Some(kb),
                Err(e) => {
                    log::warn!("ignoring unreadable cache {}: {e}", path.display());
                    None
                }
            }
        } else {
            None
        };
        let kb = match cached {
            Some(kb) => kb,
            None => {
                let kb = KnowledgeBase::build(doc, self.embedder, self.summarizer, cfg)?;
                kb.save(&path)?;
                kb
            }
        };
        let kb = Arc::new(kb);
        self.memo.lock().expect("kb memo").insert(path, kb.clone());
        Ok(kb)
    }
}
