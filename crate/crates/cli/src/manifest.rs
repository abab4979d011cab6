use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use esgx_core::fsutil::{sha256_file, write_atomic};
use serde::Serialize;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ProviderNames {
    pub embedding: Option<String>,
    pub rerank: Option<String>,
    pub chat: Option<String>,
    pub summary: Option<String>,
}

/// Provenance of one output directory. Timestamps are the only fields that
/// change between identical offline runs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub started_at: String,
    pub finished_at: String,
    pub config: serde_json::Value,
    pub providers: ProviderNames,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn start(command: &str, config: serde_json::Value) -> Self {
        RunManifest {
            tool: env!("CARGO_BIN_NAME").to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            started_at: chrono::Utc::now().to_rfc3339(),
            finished_at: String::new(),
            config,
            providers: ProviderNames::default(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest(path, None)?);
        Ok(())
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        let message = message.into();
        log::warn!("{message}");
        self.warnings.push(message);
    }

    /// Digest the outputs (paths relative to `dir`) and write the manifest.
    pub fn finish(mut self, dir: &Path, outputs: &[PathBuf]) -> Result<PathBuf> {
        self.inputs.sort_by(|a, b| a.path.cmp(&b.path));
        self.inputs.dedup_by(|a, b| a.path == b.path);
        for o in outputs {
            self.outputs.push(digest(o, Some(dir))?);
        }
        self.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        self.finished_at = chrono::Utc::now().to_rfc3339();
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&self)?;
        text.push('\n');
        write_atomic(&path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

fn digest(path: &Path, relative_to: Option<&Path>) -> Result<FileDigest> {
    let sha256 = sha256_file(path).with_context(|| format!("hashing {}", path.display()))?;
    let shown = relative_to.and_then(|d| path.strip_prefix(d).ok()).unwrap_or(path);
    Ok(FileDigest {
        path: shown.display().to_string(),
        sha256,
    })
}
