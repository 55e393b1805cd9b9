//! Engine configuration file (TOML).
//!
//! ```toml
//! corpus_dir = "corpus"          # holds manifest.jsonl and <model>.idx
//! listen = "127.0.0.1:8080"
//! thumbnail_dir = "thumbs"       # optional, <video_id>/<frame_index>.jpg
//! qa_log = "qa_log.jsonl"         # optional
//! ui_dir = "ui/dist"              # optional static frontend
//!
//! [[models]]
//! id = "clip"
//! endpoint = "stub"              # or an http(s) URL
//! index = "corpus/clip.idx"      # optional
//! dim = 512                      # optional, defaults to the index dim
//! timeout_ms = 5000
//! ```
//!
//! Relative paths resolve against the directory containing the file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{EncoderEndpointConfig, Endpoint};

pub const CONFIG_ENV: &str = "MOMENTSCOPE_CONFIG";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {message}")]
    Parse { path: String, message: String },
    #[error("config lists no models")]
    NoModels,
    #[error("model {0} listed twice")]
    DuplicateModel(String),
}

fn default_endpoint() -> String {
    "stub".into()
}

fn default_timeout_ms() -> u64 {
    5000
}

fn default_listen() -> String {
    DEFAULT_LISTEN.into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub id: String,
    #[serde(default = "default_endpoint")]
    pub endpoint: String,
    #[serde(default)]
    pub index: Option<PathBuf>,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

impl ModelEntry {
    pub fn encoder_config(&self, dim: usize) -> EncoderEndpointConfig {
        EncoderEndpointConfig {
            model_id: self.id.clone(),
            endpoint: Endpoint::parse(&self.endpoint),
            timeout: Duration::from_millis(self.timeout_ms),
            dim: self.dim.unwrap_or(dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub corpus_dir: PathBuf,
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default)]
    pub thumbnail_dir: Option<PathBuf>,
    #[serde(default)]
    pub qa_log: Option<PathBuf>,
    #[serde(default)]
    pub ui_dir: Option<PathBuf>,
    pub models: Vec<ModelEntry>,
}

impl EngineConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: EngineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: base_dir.display().to_string(),
            message: e.to_string(),
        })?;
        if cfg.models.is_empty() {
            return Err(ConfigError::NoModels);
        }
        let mut seen = std::collections::HashSet::new();
        for m in &cfg.models {
            if !seen.insert(m.id.as_str()) {
                return Err(ConfigError::DuplicateModel(m.id.clone()));
            }
        }
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        resolve(&mut cfg.corpus_dir);
        for p in [&mut cfg.thumbnail_dir, &mut cfg.qa_log, &mut cfg.ui_dir]
            .into_iter()
            .flatten()
        {
            resolve(p);
        }
        for m in &mut cfg.models {
            if let Some(p) = &mut m.index {
                resolve(p);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.corpus_dir.join(MANIFEST_FILE)
    }

    pub fn index_path(&self, model: &ModelEntry) -> PathBuf {
        model
            .index
            .clone()
            .unwrap_or_else(|| self.corpus_dir.join(format!("{}.idx", model.id)))
    }

    pub fn qa_log_path(&self) -> PathBuf {
        self.qa_log
            .clone()
            .unwrap_or_else(|| self.corpus_dir.join("qa_log.jsonl"))
    }
}
