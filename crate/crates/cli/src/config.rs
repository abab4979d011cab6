//! Run configuration file (TOML).
//!
//! Relative paths are resolved against the directory of the config file.
//! Credentials never live here: an endpoint names the environment variable
//! that holds its token.

use std::path::{Path, PathBuf};

use esgx_core::agent::GenerationParams;
use esgx_core::eval::{AblationArm, EvalOptions};
use esgx_core::kb::{Chunking, KbConfig, DEFAULT_LEAD_SENTENCES, DEFAULT_MAX_CHARS, DEFAULT_NAIVE_WINDOW};
use esgx_core::provider::HttpEndpoint;
use esgx_core::retrieval::RetrievalConfig;
use esgx_core::value::parse_number;
use serde::{Deserialize, Serialize};

pub const BUNDLED_REGISTRY: &str = "bundled";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Registry file, or `"bundled"` for the built-in HKEx registry.
    #[serde(default = "default_registry")]
    pub registry: String,
    /// Directory of reports (`.json` layout files, `.md` or `.txt`).
    pub corpus: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    /// Root of all outputs; each command writes its own subdirectory.
    pub output: PathBuf,
    /// Pipeline variant used by `build-kb`, `extract` and `analyze`.
    #[serde(default = "default_arm")]
    pub arm: String,
    #[serde(default)]
    pub providers: ProvidersConfig,
    #[serde(default)]
    pub kb: KbSection,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub extraction: ExtractionSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub analytics: AnalyticsSection,
}

fn default_registry() -> String {
    BUNDLED_REGISTRY.into()
}

fn default_arm() -> String {
    AblationArm::EnhancedRagKnowledge.id().into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Offline,
    Online,
}

/// An HTTP provider. `dim` is required for embedding endpoints only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub name: String,
    pub url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retries: Option<u32>,
    /// Environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_env: Option<String>,
}

impl EndpointConfig {
    pub fn endpoint(&self) -> HttpEndpoint {
        let mut e = HttpEndpoint::new(&self.url);
        if let Some(t) = self.timeout_ms {
            e.timeout_ms = t;
        }
        if let Some(r) = self.retries {
            e.retries = r;
        }
        e.token_env = self.token_env.clone();
        e
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvidersConfig {
    #[serde(default)]
    pub mode: Mode,
    /// Offline chat fixture.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_replies: Option<PathBuf>,
    /// Dimension of the offline embedder.
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
    /// Upper bound on concurrent chat calls.
    #[serde(default = "default_max_calls")]
    pub max_concurrent_calls: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EndpointConfig>,
    /// Optional in online mode; token overlap is used without it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rerank: Option<EndpointConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chat: Option<EndpointConfig>,
}

fn default_dim() -> usize {
    esgx_core::kb::DEFAULT_DIM
}

fn default_max_calls() -> usize {
    4
}

impl Default for ProvidersConfig {
    fn default() -> Self {
        ProvidersConfig {
            mode: Mode::Offline,
            mock_replies: None,
            embedding_dim: default_dim(),
            max_concurrent_calls: default_max_calls(),
            embedding: None,
            rerank: None,
            chat: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KbSection {
    pub max_chars: usize,
    pub summary_sentences: usize,
    pub embed_batch: usize,
    pub naive_window: usize,
    /// Defaults to `<output>/kb-cache`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

impl Default for KbSection {
    fn default() -> Self {
        KbSection {
            max_chars: DEFAULT_MAX_CHARS,
            summary_sentences: DEFAULT_LEAD_SENTENCES,
            embed_batch: 64,
            naive_window: DEFAULT_NAIVE_WINDOW,
            cache_dir: None,
        }
    }
}

impl KbSection {
    pub fn structured(&self) -> KbConfig {
        KbConfig {
            chunking: Chunking::Structured {
                max_chars: self.max_chars,
            },
            summary_sentences: self.summary_sentences,
            embed_batch: self.embed_batch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractionSection {
    pub retries: u32,
    pub retry_base_delay_ms: u64,
    pub params: GenerationParams,
}

impl Default for ExtractionSection {
    fn default() -> Self {
        ExtractionSection {
            retries: 2,
            retry_base_delay_ms: 500,
            params: GenerationParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_aliases: Option<PathBuf>,
    /// Relative tolerance for value matches, e.g. `"0.01"`. Off by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_tolerance: Option<String>,
}

impl EvaluationSection {
    pub fn options(&self) -> Result<EvalOptions, String> {
        let rel_tolerance = match &self.rel_tolerance {
            None => None,
            Some(t) => match parse_number(t) {
                Some(p) if p.unit.is_none() && !p.range && !p.value.is_sign_negative() => Some(p.value),
                _ => return Err(format!("evaluation.rel_tolerance: not a non-negative number: `{t}`")),
            },
        };
        Ok(EvalOptions { rel_tolerance })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theme_map: Option<PathBuf>,
    pub scope1_id: String,
    pub scope2_id: String,
    pub top_n: usize,
}

impl Default for AnalyticsSection {
    fn default() -> Self {
        AnalyticsSection {
            theme_map: None,
            scope1_id: esgx_core::analytics::DEFAULT_SCOPE1_ID.into(),
            scope2_id: esgx_core::analytics::DEFAULT_SCOPE2_ID.into(),
            top_n: esgx_core::analytics::DEFAULT_TOP_N,
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Parse, resolve relative paths and validate.
    pub fn load(path: &Path) -> Result<RunConfig, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("config {}: {e}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        if self.registry != BUNDLED_REGISTRY {
            let mut p = PathBuf::from(&self.registry);
            resolve(base, &mut p);
            self.registry = p.display().to_string();
        }
        resolve(base, &mut self.corpus);
        resolve(base, &mut self.output);
        let optional = [
            &mut self.labels,
            &mut self.providers.mock_replies,
            &mut self.kb.cache_dir,
            &mut self.evaluation.unit_aliases,
            &mut self.analytics.theme_map,
        ];
        for p in optional.into_iter().flatten() {
            resolve(base, p);
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if AblationArm::from_id(&self.arm).is_none() {
            return Err(format!("unknown arm `{}`", self.arm));
        }
        if self.registry != BUNDLED_REGISTRY && !Path::new(&self.registry).is_file() {
            return Err(format!("registry file not found: {}", self.registry));
        }
        if !self.corpus.is_dir() {
            return Err(format!("corpus directory not found: {}", self.corpus.display()));
        }
        self.kb.structured().validate()?;
        if self.kb.naive_window == 0 {
            return Err("kb.naive_window must be positive".into());
        }
        self.evaluation.options()?;
        if self.retrieval.k == 0 {
            return Err("retrieval.k must be positive".into());
        }
        if self.providers.max_concurrent_calls == 0 {
            return Err("providers.max_concurrent_calls must be positive".into());
        }
        let p = &self.providers;
        match p.mode {
            Mode::Offline => {
                if p.embedding.is_some() || p.rerank.is_some() || p.chat.is_some() {
                    return Err("offline mode takes no provider endpoints".into());
                }
                if p.embedding_dim == 0 {
                    return Err("providers.embedding_dim must be positive".into());
                }
            }
            Mode::Online => {
                if p.embedding.is_none() || p.chat.is_none() {
                    return Err("online mode needs [providers.embedding] and [providers.chat]".into());
                }
                if p.embedding.as_ref().is_some_and(|e| e.dim.is_none_or(|d| d == 0)) {
                    return Err("providers.embedding.dim must be a positive integer".into());
                }
                if p.mock_replies.is_some() {
                    return Err("providers.mock_replies is only used in offline mode".into());
                }
            }
        }
        let files = [
            ("labels", &self.labels),
            ("providers.mock_replies", &p.mock_replies),
            ("evaluation.unit_aliases", &self.evaluation.unit_aliases),
            ("analytics.theme_map", &self.analytics.theme_map),
        ];
        for (name, f) in files {
            if let Some(f) = f {
                if !f.is_file() {
                    return Err(format!("{name}: file not found: {}", f.display()));
                }
            }
        }
        Ok(())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.kb
            .cache_dir
            .clone()
            .unwrap_or_else(|| self.output.join("kb-cache"))
    }
}

/// Config written next to a generated synthetic corpus.
pub fn synthetic_config() -> String {
    "\
# Offline run over the synthetic corpus.
registry = \"bundled\"
corpus = \"docs\"
labels = \"labels.jsonl\"
output = \"out\"
arm = \"enhanced_rag_knowledge\"

[providers]
mode = \"offline\"
mock_replies = \"mock_replies.json\"
embedding_dim = 256

[kb]
max_chars = 1200
naive_window = 500

[retrieval]
k = 5
m = 10
budget_chars = 6000

[extraction]
retries = 2
retry_base_delay_ms = 0
"
    .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, body: &str) -> PathBuf {
        std::fs::create_dir_all(dir.join("docs")).unwrap();
        let p = dir.join("esgx.toml");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "corpus = \"docs\"\noutput = \"out\"\n");
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.registry, BUNDLED_REGISTRY);
        assert_eq!(c.corpus, dir.path().join("docs"));
        assert_eq!(c.retrieval, RetrievalConfig::default());
        assert_eq!(c.providers.mode, Mode::Offline);
        assert_eq!(c.kb.naive_window, 500);
        assert_eq!(c.evaluation.options().unwrap().rel_tolerance, None);
    }

    #[test]
    fn offline_rejects_endpoints() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "corpus = \"docs\"\noutput = \"out\"\n[providers.chat]\nname = \"c\"\nurl = \"http://x\"\n",
        );
        assert!(RunConfig::load(&p).unwrap_err().contains("offline"));
    }

    #[test]
    fn missing_registry_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "registry = \"nope.json\"\ncorpus = \"docs\"\noutput = \"out\"\n",
        );
        assert!(RunConfig::load(&p).unwrap_err().contains("nope.json"));
    }

    #[test]
    fn unknown_field_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "corpus = \"docs\"\noutput = \"out\"\nbogus = 1\n");
        assert!(RunConfig::load(&p).is_err());
    }

    #[test]
    fn synthetic_config_parses() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("labels.jsonl"), "").unwrap();
        std::fs::write(dir.path().join("mock_replies.json"), "{}").unwrap();
        let p = write(dir.path(), &synthetic_config());
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.extraction.retry_base_delay_ms, 0);
    }
}
