//! Request/response pipeline shared by the CLI and the HTTP service.
//!
//! Search runs ensemble fusion with depth `max(50, limit)`, optionally
//! reranks the fused candidates with the first enabled model, then truncates
//! to `limit`. All handlers are pure functions of the loaded [`Engine`].

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::EngineConfig;
use crate::corpus::{CorpusError, CorpusManifest, FrameKey, FrameRecord};
use crate::encoder::{EncodeError, TextEncoder};
use crate::ensemble::{ensemble_search, EnsembleError, ModelConfig, ModelRegistry, DEFAULT_DEPTH};
use crate::index::{FlatIndex, IndexError};
use crate::rerank::{rerank, RerankConfig, RerankError};
use crate::temporal::{find_best_frame_pair, MomentSelection, ScoredFrame, TemporalConfig, TemporalError};

pub const DEFAULT_LIMIT: usize = 100;
pub const MAX_LIMIT: usize = 500;
pub const PLACEHOLDER_THUMBNAIL: &str = "/static/placeholder.svg";
pub const THUMBNAIL_EXT: &str = "jpg";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    BadRequest,
    NotFound,
    Upstream,
    Internal,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    BadRequest(String),
    #[error("unknown model {0}")]
    UnknownModel(String),
    #[error("unknown video {0}")]
    UnknownVideo(String),
    #[error("encoder for model {model_id} failed: {message}")]
    Encoder { model_id: String, message: String },
    #[error("corpus has no frames")]
    EmptyCorpus,
    #[error("{0}")]
    Internal(String),
}

impl PipelineError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            PipelineError::BadRequest(_) => ErrorKind::BadRequest,
            PipelineError::UnknownModel(_) | PipelineError::UnknownVideo(_) => ErrorKind::NotFound,
            PipelineError::Encoder { .. } => ErrorKind::Upstream,
            PipelineError::EmptyCorpus | PipelineError::Internal(_) => ErrorKind::Internal,
        }
    }
}

impl From<EnsembleError> for PipelineError {
    fn from(e: EnsembleError) -> Self {
        match e {
            EnsembleError::UnknownModel(m) => PipelineError::UnknownModel(m),
            EnsembleError::Encode {
                source: EncodeError::EmptyText,
                ..
            } => PipelineError::BadRequest("query must not be empty".into()),
            EnsembleError::Encode { model_id, source } => PipelineError::Encoder {
                model_id,
                message: source.to_string(),
            },
            EnsembleError::Index { source, .. } => PipelineError::Internal(source.to_string()),
            other => PipelineError::BadRequest(other.to_string()),
        }
    }
}

impl From<RerankError> for PipelineError {
    fn from(e: RerankError) -> Self {
        match e {
            RerankError::RadiusTooLarge(_) | RerankError::Corpus(_) => {
                PipelineError::BadRequest(e.to_string())
            }
            other => PipelineError::Internal(other.to_string()),
        }
    }
}

impl From<TemporalError> for PipelineError {
    fn from(e: TemporalError) -> Self {
        match e {
            TemporalError::ZeroSteps | TemporalError::InvalidFloor | TemporalError::Corpus(_) => {
                PipelineError::BadRequest(e.to_string())
            }
            other => PipelineError::Internal(other.to_string()),
        }
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("manifest {path}: {source}")]
    Manifest {
        path: String,
        #[source]
        source: CorpusError,
    },
    #[error("index {path}: {source}")]
    Index {
        path: String,
        #[source]
        source: IndexError,
    },
    #[error(transparent)]
    Encoder(#[from] EncodeError),
    #[error("model {model_id}: encoder dim {encoder} does not match index dim {index}")]
    DimMismatch {
        model_id: String,
        encoder: usize,
        index: usize,
    },
    #[error("index file {path} holds model {found}, config expects {expected}")]
    ModelMismatch {
        path: String,
        expected: String,
        found: String,
    },
    #[error("thumbnail dir {path}: {source}")]
    Thumbnails {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn default_true() -> bool {
    true
}

fn default_limit() -> usize {
    DEFAULT_LIMIT
}

fn default_radius() -> u32 {
    RerankConfig::default().radius
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankOptions {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_radius")]
    pub radius: u32,
    #[serde(default = "default_true")]
    pub include_center: bool,
}

impl RerankOptions {
    pub fn with_radius(radius: u32) -> Self {
        Self {
            enabled: true,
            radius,
            include_center: true,
        }
    }

    fn config(&self) -> RerankConfig {
        RerankConfig {
            radius: self.radius,
            include_center: self.include_center,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRequest {
    pub query: String,
    /// Empty means every loaded model at equal weight.
    #[serde(default)]
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub rerank: Option<RerankOptions>,
    #[serde(default = "default_limit")]
    pub limit: usize,
}

impl SearchRequest {
    pub fn new(query: impl Into<String>) -> Self {
        Self {
            query: query.into(),
            models: Vec::new(),
            rerank: None,
            limit: DEFAULT_LIMIT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchEntry {
    pub frame_key: FrameKey,
    pub video_id: String,
    pub frame_index: u32,
    pub timestamp_s: f64,
    /// Final ranking score: the rerank aggregate when rerank ran, else the
    /// ensemble score.
    pub fused_score: f64,
    pub ensemble_score: f64,
    /// Raw cosine scores from each model whose top-M contained the frame.
    pub per_model_scores: BTreeMap<String, f64>,
    pub thumbnail_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub entries: Vec<SearchEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalRequest {
    pub anchor_key: i64,
    pub query_start: String,
    pub query_end: String,
    #[serde(default)]
    pub gap_c: Option<u32>,
    #[serde(default)]
    pub floor: Option<f64>,
    #[serde(default)]
    pub max_steps: Option<u32>,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFrame {
    pub frame_key: FrameKey,
    pub video_id: String,
    pub frame_index: u32,
    pub timestamp_s: f64,
    pub score: f64,
    pub thumbnail_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalResponse {
    pub moment: MomentSelection,
    pub config: TemporalConfig,
    pub start_candidates: Vec<CandidateFrame>,
    pub end_candidates: Vec<CandidateFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameView {
    #[serde(flatten)]
    pub frame: FrameRecord,
    pub thumbnail_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model_id: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSummary {
    pub video_id: String,
    pub fps: String,
    pub frame_count: u32,
    pub keyframes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub corpus_hash: String,
    pub created_at: String,
    pub frame_count: usize,
    pub usable: bool,
    pub models: Vec<ModelSummary>,
    pub videos: Vec<VideoSummary>,
}

/// Resolves `(video_id, frame_index)` to a thumbnail URL.
#[derive(Debug, Clone, Default)]
pub struct Thumbnails {
    present: HashSet<(String, u32)>,
}

impl Thumbnails {
    /// Scans `<dir>/<video_id>/<frame_index>.jpg`.
    pub fn scan(dir: &Path) -> std::io::Result<Self> {
        let mut present = HashSet::new();
        for video in std::fs::read_dir(dir)? {
            let video = video?;
            if !video.file_type()?.is_dir() {
                continue;
            }
            let Some(video_id) = video.file_name().to_str().map(str::to_string) else {
                continue;
            };
            for frame in std::fs::read_dir(video.path())? {
                let path = frame?.path();
                if path.extension().and_then(|e| e.to_str()) != Some(THUMBNAIL_EXT) {
                    continue;
                }
                if let Some(idx) = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .and_then(|s| s.parse::<u32>().ok())
                {
                    present.insert((video_id.clone(), idx));
                }
            }
        }
        Ok(Self { present })
    }

    pub fn url(&self, video_id: &str, frame_index: u32) -> String {
        if self.present.contains(&(video_id.to_string(), frame_index)) {
            format!("/thumbnails/{video_id}/{frame_index}.{THUMBNAIL_EXT}")
        } else {
            PLACEHOLDER_THUMBNAIL.to_string()
        }
    }
}

/// Loaded, immutable corpus state.
#[derive(Clone)]
pub struct Engine {
    manifest: Arc<CorpusManifest>,
    models: ModelRegistry,
    thumbnails: Thumbnails,
}

impl Engine {
    pub fn new(manifest: CorpusManifest, models: ModelRegistry, thumbnails: Thumbnails) -> Self {
        Self {
            manifest: Arc::new(manifest),
            models,
            thumbnails,
        }
    }

    pub fn load(config: &EngineConfig) -> Result<Self, LoadError> {
        let manifest_path = config.manifest_path();
        let manifest = CorpusManifest::load(&manifest_path).map_err(|source| LoadError::Manifest {
            path: manifest_path.display().to_string(),
            source,
        })?;
        let mut models = ModelRegistry::new();
        for entry in &config.models {
            let path = config.index_path(entry);
            let index = FlatIndex::load(&path, &manifest).map_err(|source| LoadError::Index {
                path: path.display().to_string(),
                source,
            })?;
            if index.model_id() != entry.id {
                return Err(LoadError::ModelMismatch {
                    path: path.display().to_string(),
                    expected: entry.id.clone(),
                    found: index.model_id().to_string(),
                });
            }
            let encoder: Arc<dyn TextEncoder> = Arc::from(entry.encoder_config(index.dim()).build()?);
            if encoder.dim() != index.dim() {
                return Err(LoadError::DimMismatch {
                    model_id: entry.id.clone(),
                    encoder: encoder.dim(),
                    index: index.dim(),
                });
            }
            models.insert(index, encoder);
        }
        let thumbnails = match &config.thumbnail_dir {
            Some(dir) if dir.exists() => Thumbnails::scan(dir).map_err(|source| LoadError::Thumbnails {
                path: dir.display().to_string(),
                source,
            })?,
            _ => Thumbnails::default(),
        };
        Ok(Self::new(manifest, models, thumbnails))
    }

    pub fn manifest(&self) -> &CorpusManifest {
        &self.manifest
    }

    pub fn models(&self) -> &ModelRegistry {
        &self.models
    }

    pub fn thumbnail_url(&self, video_id: &str, frame_index: u32) -> String {
        self.thumbnails.url(video_id, frame_index)
    }

    pub fn default_model(&self) -> Option<&str> {
        self.models.ids().next()
    }

    pub fn handle_search(&self, req: &SearchRequest) -> Result<SearchResponse, PipelineError> {
        if req.query.trim().is_empty() {
            return Err(PipelineError::BadRequest("query must not be empty".into()));
        }
        if req.limit == 0 || req.limit > MAX_LIMIT {
            return Err(PipelineError::BadRequest(format!(
                "limit must be in 1..={MAX_LIMIT}"
            )));
        }
        if !self.manifest.usable() {
            return Err(PipelineError::EmptyCorpus);
        }
        let configs: Vec<ModelConfig> = if req.models.is_empty() {
            self.models.ids().map(|id| ModelConfig::new(id, 1.0)).collect()
        } else {
            req.models.clone()
        };
        let depth = DEFAULT_DEPTH.max(req.limit);
        let outcome = ensemble_search(&req.query, &configs, &self.models, depth)?;

        let ensemble_scores: BTreeMap<FrameKey, f64> =
            outcome.fused.iter().map(|e| (e.frame_key, e.score)).collect();
        let mut ranked = match &req.rerank {
            Some(opts) if opts.enabled => {
                let first = outcome
                    .runs
                    .first()
                    .ok_or_else(|| PipelineError::Internal("no model runs".into()))?;
                let handle = self
                    .models
                    .get(&first.model_id)
                    .ok_or_else(|| PipelineError::UnknownModel(first.model_id.clone()))?;
                rerank(&outcome.fused, &first.query, &opts.config(), &handle.index, &self.manifest)?
            }
            _ => outcome.fused.clone(),
        };
        ranked.truncate(req.limit);

        let raw: Vec<(String, std::collections::HashMap<FrameKey, f64>)> = outcome
            .runs
            .iter()
            .map(|r| (r.model_id.clone(), r.raw_scores()))
            .collect();
        let entries = ranked
            .iter()
            .map(|e| {
                let frame = self
                    .manifest
                    .frame(e.frame_key)
                    .ok_or_else(|| PipelineError::Internal(format!("frame {} not in manifest", e.frame_key)))?;
                let per_model_scores = raw
                    .iter()
                    .filter_map(|(id, scores)| scores.get(&e.frame_key).map(|s| (id.clone(), *s)))
                    .collect();
                Ok(SearchEntry {
                    frame_key: e.frame_key,
                    video_id: frame.video_id.clone(),
                    frame_index: frame.frame_index,
                    timestamp_s: frame.timestamp_s,
                    fused_score: e.score,
                    ensemble_score: ensemble_scores[&e.frame_key],
                    per_model_scores,
                    thumbnail_url: self.thumbnail_url(&frame.video_id, frame.frame_index),
                })
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        Ok(SearchResponse {
            entries,
            warnings: outcome.warnings,
        })
    }

    pub fn handle_temporal(&self, req: &TemporalRequest) -> Result<TemporalResponse, PipelineError> {
        let anchor = self
            .manifest
            .checked_key(req.anchor_key)
            .map_err(|e| PipelineError::BadRequest(e.to_string()))?;
        for q in [&req.query_start, &req.query_end] {
            if q.trim().is_empty() {
                return Err(PipelineError::BadRequest(
                    "query_start and query_end must not be empty".into(),
                ));
            }
        }
        let handle = self
            .models
            .get(&req.model_id)
            .ok_or_else(|| PipelineError::UnknownModel(req.model_id.clone()))?;
        let defaults = TemporalConfig::default();
        let config = TemporalConfig {
            max_steps: req.max_steps.unwrap_or(defaults.max_steps),
            similarity_floor: req.floor.unwrap_or(defaults.similarity_floor),
            gap_c: req.gap_c.unwrap_or(defaults.gap_c),
        };
        let encode = |text: &str| {
            handle.encoder.encode(text).map_err(|e| PipelineError::Encoder {
                model_id: req.model_id.clone(),
                message: e.to_string(),
            })
        };
        let (q_start, q_end) = (encode(&req.query_start)?, encode(&req.query_end)?);
        let result = find_best_frame_pair(&q_start, &q_end, anchor, &config, &handle.index, &self.manifest)?;
        result
            .moment
            .validate(&self.manifest, Some(config.gap_c))
            .map_err(PipelineError::Internal)?;
        let view = |f: &ScoredFrame| {
            let rec = &self.manifest.frames()[f.frame_key.index()];
            CandidateFrame {
                frame_key: f.frame_key,
                video_id: rec.video_id.clone(),
                frame_index: rec.frame_index,
                timestamp_s: rec.timestamp_s,
                score: f.score,
                thumbnail_url: self.thumbnail_url(&rec.video_id, rec.frame_index),
            }
        };
        Ok(TemporalResponse {
            start_candidates: result.start_candidates.iter().map(view).collect(),
            end_candidates: result.end_candidates.iter().map(view).collect(),
            moment: result.moment,
            config,
        })
    }

    /// Keyframes of `video_id` with `from <= frame_index <= to`, ascending.
    pub fn handle_frames_window(
        &self,
        video_id: &str,
        from: Option<u32>,
        to: Option<u32>,
    ) -> Result<Vec<FrameView>, PipelineError> {
        let span = self
            .manifest
            .video_span(video_id)
            .ok_or_else(|| PipelineError::UnknownVideo(video_id.to_string()))?;
        let from = from.unwrap_or(0);
        let to = to.unwrap_or(u32::MAX);
        if from > to {
            return Err(PipelineError::BadRequest(format!(
                "reversed range: from {from} > to {to}"
            )));
        }
        Ok(self.manifest.frames()[span]
            .iter()
            .filter(|f| f.frame_index >= from && f.frame_index <= to)
            .map(|f| FrameView {
                thumbnail_url: self.thumbnail_url(&f.video_id, f.frame_index),
                frame: f.clone(),
            })
            .collect())
    }

    pub fn corpus_summary(&self) -> CorpusSummary {
        let m = &self.manifest;
        CorpusSummary {
            corpus_hash: m.corpus_hash().to_hex(),
            created_at: m.created_at().to_string(),
            frame_count: m.len(),
            usable: m.usable(),
            models: self
                .models
                .ids()
                .map(|id| ModelSummary {
                    model_id: id.to_string(),
                    dim: self.models.get(id).map(|h| h.index.dim()).unwrap_or(0),
                })
                .collect(),
            videos: m
                .videos()
                .iter()
                .map(|v| VideoSummary {
                    video_id: v.video_id.clone(),
                    fps: v.fps.to_string(),
                    frame_count: v.frame_count,
                    keyframes: m.video_span(&v.video_id).map(|r| r.len()).unwrap_or(0),
                })
                .collect(),
        }
    }
}
