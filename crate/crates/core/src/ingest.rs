//! Scene boundaries plus per-frame embeddings in, deduplicated keyframe
//! manifest out.
//!
//! Each scene is sampled at `frames_per_scene` evenly spaced indices
//! (endpoints included), then near-duplicates are removed with a greedy
//! scan: a frame survives iff its cosine similarity to every frame already
//! kept in the same scene is at most the threshold.
//!
//! On-disk inputs:
//! - boundary files, one per video, named `<video_id>.<ext>`, holding one
//!   `start end` pair of inclusive frame indices per line;
//! - a video table whose first line is a header, then `video_id fps
//!   frame_count` per line;
//! - frame embedding files at `<embeddings>/<model_id>/<video_id>.frm`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    build_manifest, validate_video_id, CorpusError, CorpusManifest, KeptFrame, SceneBoundary,
    VideoDescriptor,
};
use crate::embedding::{cosine, is_unit, EmbeddingError, EmbeddingMatrix, FrameEmbeddings};

pub const FRAME_EMBEDDING_EXT: &str = "frm";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DedupConfig {
    pub similarity_threshold: f32,
    pub frames_per_scene: usize,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self {
            similarity_threshold: 0.9,
            frames_per_scene: 4,
        }
    }
}

impl DedupConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        let s = self.similarity_threshold;
        if !(s > 0.0 && s <= 1.0) {
            return Err(IngestError::InvalidConfig(format!(
                "similarity threshold {s} outside (0, 1]"
            )));
        }
        if self.frames_per_scene == 0 {
            return Err(IngestError::InvalidConfig(
                "frames per scene must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneReport {
    pub video_id: String,
    pub scene_id: u32,
    pub sampled: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupReport {
    pub scenes_processed: usize,
    pub frames_sampled: usize,
    pub frames_removed: usize,
    pub frames_kept: usize,
    pub per_scene: Vec<SceneReport>,
}

impl DedupReport {
    pub fn from_scenes(per_scene: Vec<SceneReport>) -> Self {
        let frames_sampled = per_scene.iter().map(|s| s.sampled).sum();
        let frames_kept = per_scene.iter().map(|s| s.kept).sum();
        Self {
            scenes_processed: per_scene.len(),
            frames_sampled,
            frames_removed: frames_sampled - frames_kept,
            frames_kept,
            per_scene,
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.frames_kept + self.frames_removed == self.frames_sampled
            && self.scenes_processed == self.per_scene.len()
            && self.per_scene.iter().map(|s| s.sampled).sum::<usize>() == self.frames_sampled
            && self.per_scene.iter().map(|s| s.kept).sum::<usize>() == self.frames_kept
            && self
                .per_scene
                .iter()
                .all(|s| s.kept <= s.sampled && (s.sampled == 0 || s.kept >= 1))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BoundaryErrorKind {
    Syntax(String),
    EndBeforeStart,
    OutOfRange { frame_count: u32 },
    NonMonotone,
    Overlap,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct BoundaryError {
    pub line: usize,
    pub kind: BoundaryErrorKind,
}

impl fmt::Display for BoundaryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let line = self.line;
        match &self.kind {
            BoundaryErrorKind::Syntax(msg) => write!(f, "{msg} at line {line}"),
            BoundaryErrorKind::EndBeforeStart => write!(f, "end before start at line {line}"),
            BoundaryErrorKind::OutOfRange { frame_count } => write!(
                f,
                "frame index out of range (video has {frame_count} frames) at line {line}"
            ),
            BoundaryErrorKind::NonMonotone => write!(f, "non-monotone start at line {line}"),
            BoundaryErrorKind::Overlap => write!(f, "overlap at line {line}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid ingest config: {0}")]
    InvalidConfig(String),
    #[error("boundary file for video {video_id}: {source}")]
    Boundary {
        video_id: String,
        #[source]
        source: BoundaryError,
    },
    #[error("video table line {line}: {reason}")]
    VideoTable { line: usize, reason: String },
    #[error("missing {what} for videos: {}", video_ids.join(", "))]
    MissingInputs { what: String, video_ids: Vec<String> },
    #[error("inputs reference videos absent from the video table: {}", .0.join(", "))]
    UnknownVideos(Vec<String>),
    #[error("no embedding models provided")]
    NoModels,
    #[error("model {model_id} has no embedding for {video_id} frame {frame_index}")]
    MissingFrameEmbedding {
        model_id: String,
        video_id: String,
        frame_index: u32,
    },
    #[error("model {model_id} has inconsistent dims {a} and {b}")]
    DimMismatch { model_id: String, a: usize, b: usize },
    #[error("embedding file {path} declares model {found}, expected {expected}")]
    ModelMismatch {
        path: String,
        expected: String,
        found: String,
    },
    #[error("{frames} frame indices but {embeddings} embeddings")]
    EmbeddingCountMismatch { frames: usize, embeddings: usize },
    #[error("embedding {position} is not unit length")]
    NotUnit { position: usize },
    #[error("unknown dedup model {0}")]
    UnknownDedupModel(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads `start end` lines; blank lines and `#` comments are skipped.
pub fn parse_scene_boundaries<R: BufRead>(
    source: R,
    video_id: &str,
    frame_count: u32,
) -> Result<Vec<SceneBoundary>, BoundaryError> {
    let mut scenes: Vec<SceneBoundary> = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let err = |kind| BoundaryError {
            line: line_no,
            kind,
        };
        let line = line.map_err(|e| err(BoundaryErrorKind::Syntax(e.to_string())))?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_ascii_whitespace().collect();
        let [start, end] = fields[..] else {
            return Err(err(BoundaryErrorKind::Syntax(format!(
                "expected \"start end\", got {content:?}"
            ))));
        };
        let parse = |s: &str| {
            s.parse::<u32>()
                .map_err(|_| err(BoundaryErrorKind::Syntax(format!("invalid frame index {s:?}"))))
        };
        let (start, end) = (parse(start)?, parse(end)?);
        if end < start {
            return Err(err(BoundaryErrorKind::EndBeforeStart));
        }
        if end >= frame_count {
            return Err(err(BoundaryErrorKind::OutOfRange { frame_count }));
        }
        if let Some(prev) = scenes.last() {
            if start < prev.start_frame {
                return Err(err(BoundaryErrorKind::NonMonotone));
            }
            if start <= prev.end_frame {
                return Err(err(BoundaryErrorKind::Overlap));
            }
        }
        scenes.push(SceneBoundary {
            video_id: video_id.to_string(),
            scene_id: scenes.len() as u32,
            start_frame: start,
            end_frame: end,
        });
    }
    Ok(scenes)
}

/// Endpoint-inclusive evenly spaced indices, rounded half away from zero,
/// with duplicates collapsed. `n == 1` picks the midpoint.
pub fn sample_keyframes(scene: &SceneBoundary, n: usize) -> Vec<u32> {
    let start = scene.start_frame as u64;
    let span = (scene.end_frame - scene.start_frame) as u64;
    if n <= 1 {
        return vec![(start + (span + 1) / 2) as u32];
    }
    let steps = (n - 1) as u64;
    let mut out: Vec<u32> = (0..n as u64)
        // floor(i*span/steps + 1/2) in exact integer arithmetic
        .map(|i| (start + (2 * i * span + steps) / (2 * steps)) as u32)
        .collect();
    out.dedup();
    out
}

/// Greedy first-keeper scan in ascending frame order. Removal requires
/// similarity strictly greater than the threshold.
pub fn dedup_scene(
    frame_indices: &[u32],
    embeddings: &[&[f32]],
    config: &DedupConfig,
) -> Result<Vec<u32>, IngestError> {
    config.validate()?;
    if frame_indices.len() != embeddings.len() {
        return Err(IngestError::EmbeddingCountMismatch {
            frames: frame_indices.len(),
            embeddings: embeddings.len(),
        });
    }
    if let Some(position) = embeddings.iter().position(|e| !is_unit(e)) {
        return Err(IngestError::NotUnit { position });
    }
    let mut order: Vec<usize> = (0..frame_indices.len()).collect();
    order.sort_by_key(|&i| frame_indices[i]);

    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let redundant = kept
            .iter()
            .any(|&k| cosine(embeddings[k], embeddings[i]) > config.similarity_threshold);
        if !redundant {
            kept.push(i);
        }
    }
    Ok(kept.into_iter().map(|i| frame_indices[i]).collect())
}

/// Everything ingestion needs, already parsed.
#[derive(Debug, Clone, Default)]
pub struct IngestInput {
    pub videos: Vec<VideoDescriptor>,
    pub boundaries: BTreeMap<String, Vec<SceneBoundary>>,
    /// model id → video id → frame embeddings
    pub embeddings: BTreeMap<String, BTreeMap<String, FrameEmbeddings>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    pub dedup: DedupConfig,
    /// Model whose embeddings drive dedup; defaults to the first model id.
    pub dedup_model: Option<String>,
    pub created_at: String,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            dedup: DedupConfig::default(),
            dedup_model: None,
            created_at: "1970-01-01T00:00:00Z".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestOutput {
    pub manifest: CorpusManifest,
    pub report: DedupReport,
    /// One matrix per model, in manifest model order.
    pub matrices: Vec<EmbeddingMatrix>,
}

struct VideoResult {
    kept: Vec<KeptFrame>,
    scenes: Vec<SceneReport>,
}

fn ingest_video(
    video: &VideoDescriptor,
    scenes: &[SceneBoundary],
    dedup_embeddings: &FrameEmbeddings,
    dedup_model: &str,
    config: &DedupConfig,
) -> Result<VideoResult, IngestError> {
    let mut kept = Vec::new();
    let mut reports = Vec::with_capacity(scenes.len());
    for scene in scenes {
        let sampled = sample_keyframes(scene, config.frames_per_scene);
        let vectors = sampled
            .iter()
            .map(|&idx| {
                dedup_embeddings
                    .get(idx)
                    .ok_or_else(|| IngestError::MissingFrameEmbedding {
                        model_id: dedup_model.to_string(),
                        video_id: video.video_id.clone(),
                        frame_index: idx,
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let survivors = dedup_scene(&sampled, &vectors, config)?;
        reports.push(SceneReport {
            video_id: video.video_id.clone(),
            scene_id: scene.scene_id,
            sampled: sampled.len(),
            kept: survivors.len(),
        });
        kept.extend(survivors.into_iter().map(|frame_index| KeptFrame {
            video_id: video.video_id.clone(),
            frame_index,
            scene_id: scene.scene_id,
        }));
    }
    Ok(VideoResult {
        kept,
        scenes: reports,
    })
}

/// Samples, deduplicates and assembles the manifest plus one
/// manifest-aligned embedding matrix per model.
pub fn run_ingest(input: &IngestInput, options: &IngestOptions) -> Result<IngestOutput, IngestError> {
    options.dedup.validate()?;
    if input.embeddings.is_empty() {
        return Err(IngestError::NoModels);
    }
    let models: Vec<String> = input.embeddings.keys().cloned().collect();
    let dedup_model = match &options.dedup_model {
        Some(m) if input.embeddings.contains_key(m) => m.clone(),
        Some(m) => return Err(IngestError::UnknownDedupModel(m.clone())),
        None => models[0].clone(),
    };

    let known: BTreeSet<&str> = input.videos.iter().map(|v| v.video_id.as_str()).collect();
    let mut unknown: BTreeSet<String> = input
        .boundaries
        .keys()
        .filter(|v| !known.contains(v.as_str()))
        .cloned()
        .collect();
    for per_video in input.embeddings.values() {
        unknown.extend(
            per_video
                .keys()
                .filter(|v| !known.contains(v.as_str()))
                .cloned(),
        );
    }
    if !unknown.is_empty() {
        return Err(IngestError::UnknownVideos(unknown.into_iter().collect()));
    }
    let mut videos = input.videos.clone();
    videos.sort_by(|a, b| a.video_id.cmp(&b.video_id));

    let missing: Vec<String> = videos
        .iter()
        .filter(|v| !input.boundaries.contains_key(&v.video_id))
        .map(|v| v.video_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(IngestError::MissingInputs {
            what: "scene boundaries".into(),
            video_ids: missing,
        });
    }
    for (model, per_video) in &input.embeddings {
        let missing: Vec<String> = videos
            .iter()
            .filter(|v| !per_video.contains_key(&v.video_id))
            .map(|v| v.video_id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(IngestError::MissingInputs {
                what: format!("{model} embeddings"),
                video_ids: missing,
            });
        }
    }

    let dedup_set = &input.embeddings[&dedup_model];
    let results = videos
        .par_iter()
        .map(|v| {
            ingest_video(
                v,
                &input.boundaries[&v.video_id],
                &dedup_set[&v.video_id],
                &dedup_model,
                &options.dedup,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut kept = Vec::new();
    let mut scenes = Vec::new();
    for r in results {
        kept.extend(r.kept);
        scenes.extend(r.scenes);
    }
    let manifest = build_manifest(videos, kept, models.clone(), options.created_at.clone())?;
    let report = DedupReport::from_scenes(scenes);

    let matrices = models
        .iter()
        .map(|model| gather_matrix(model, &input.embeddings[model], &manifest))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(IngestOutput {
        manifest,
        report,
        matrices,
    })
}

fn gather_matrix(
    model: &str,
    per_video: &BTreeMap<String, FrameEmbeddings>,
    manifest: &CorpusManifest,
) -> Result<EmbeddingMatrix, IngestError> {
    let mut dim: Option<usize> = None;
    for fe in per_video.values() {
        match dim {
            None => dim = Some(fe.dim()),
            Some(d) if d != fe.dim() => {
                return Err(IngestError::DimMismatch {
                    model_id: model.to_string(),
                    a: d,
                    b: fe.dim(),
                })
            }
            _ => {}
        }
    }
    let dim = dim.ok_or(IngestError::NoModels)?;
    let mut data = Vec::with_capacity(manifest.len() * dim);
    for f in manifest.frames() {
        let row = per_video[&f.video_id].get(f.frame_index).ok_or_else(|| {
            IngestError::MissingFrameEmbedding {
                model_id: model.to_string(),
                video_id: f.video_id.clone(),
                frame_index: f.frame_index,
            }
        })?;
        data.extend_from_slice(row);
    }
    Ok(EmbeddingMatrix::from_raw(
        model,
        dim,
        data,
        manifest.corpus_hash(),
    )?)
}

/// Parses the video table: a header line, then `video_id fps frame_count`.
pub fn parse_video_table<R: BufRead>(source: R) -> Result<Vec<VideoDescriptor>, IngestError> {
    let mut videos = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let bad = |reason: String| IngestError::VideoTable {
            line: line_no,
            reason,
        };
        let line = line.map_err(|e| bad(e.to_string()))?;
        let content = line.trim();
        if i == 0 || content.is_empty() || content.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = content.split_ascii_whitespace().collect();
        let [id, fps, count] = fields[..] else {
            return Err(bad(format!("expected \"video_id fps frame_count\", got {content:?}")));
        };
        let fps = fps.parse().map_err(|e: CorpusError| bad(e.to_string()))?;
        let count: u32 = count
            .parse()
            .map_err(|_| bad(format!("invalid frame count {count:?}")))?;
        videos.push(VideoDescriptor::new(id, fps, count).map_err(|e| bad(e.to_string()))?);
    }
    Ok(videos)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, IngestError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        out.push(entry.path());
    }
    out.sort();
    Ok(out)
}

fn file_stem(path: &Path) -> Option<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .filter(|s| !s.starts_with('.'))
        .map(str::to_string)
}

/// Loads boundary, embedding and video-table files from disk.
pub fn load_ingest_input(
    boundaries_dir: &Path,
    embeddings_dir: &Path,
    videos_file: &Path,
) -> Result<IngestInput, IngestError> {
    let table = std::fs::File::open(videos_file).map_err(io_err(videos_file))?;
    let videos = parse_video_table(std::io::BufReader::new(table))?;
    let frame_counts: BTreeMap<&str, u32> = videos
        .iter()
        .map(|v| (v.video_id.as_str(), v.frame_count))
        .collect();

    let mut boundaries = BTreeMap::new();
    let mut unknown = Vec::new();
    for path in sorted_entries(boundaries_dir)? {
        if !path.is_file() {
            continue;
        }
        let Some(video_id) = file_stem(&path) else {
            continue;
        };
        let Some(&frame_count) = frame_counts.get(video_id.as_str()) else {
            unknown.push(video_id);
            continue;
        };
        let file = std::fs::File::open(&path).map_err(io_err(&path))?;
        let scenes = parse_scene_boundaries(std::io::BufReader::new(file), &video_id, frame_count)
            .map_err(|source| IngestError::Boundary {
                video_id: video_id.clone(),
                source,
            })?;
        boundaries.insert(video_id, scenes);
    }
    if !unknown.is_empty() {
        return Err(IngestError::UnknownVideos(unknown));
    }

    let mut embeddings = BTreeMap::new();
    for model_dir in sorted_entries(embeddings_dir)? {
        if !model_dir.is_dir() {
            continue;
        }
        let Some(model_id) = model_dir.file_name().and_then(|s| s.to_str()).map(str::to_string)
        else {
            continue;
        };
        let mut per_video = BTreeMap::new();
        for path in sorted_entries(&model_dir)? {
            if path.extension().and_then(|e| e.to_str()) != Some(FRAME_EMBEDDING_EXT) {
                continue;
            }
            let Some(video_id) = file_stem(&path) else {
                continue;
            };
            validate_video_id(&video_id)?;
            let fe = FrameEmbeddings::load(&path)?;
            if fe.model_id() != model_id {
                return Err(IngestError::ModelMismatch {
                    path: path.display().to_string(),
                    expected: model_id,
                    found: fe.model_id().to_string(),
                });
            }
            per_video.insert(video_id, fe);
        }
        embeddings.insert(model_id, per_video);
    }
    Ok(IngestInput {
        videos,
        boundaries,
        embeddings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Fps;
    use proptest::prelude::*;

    fn scene(start: u32, end: u32) -> SceneBoundary {
        SceneBoundary {
            video_id: "v".into(),
            scene_id: 0,
            start_frame: start,
            end_frame: end,
        }
    }

    #[test]
    fn boundaries_parse() {
        let s = parse_scene_boundaries("0 99\n100 250".as_bytes(), "v", 251).unwrap();
        assert_eq!(s, vec![
            SceneBoundary { video_id: "v".into(), scene_id: 0, start_frame: 0, end_frame: 99 },
            SceneBoundary { video_id: "v".into(), scene_id: 1, start_frame: 100, end_frame: 250 },
        ]);
    }

    #[test]
    fn boundary_errors_carry_line_numbers() {
        let e = parse_scene_boundaries("50 40".as_bytes(), "v", 100).unwrap_err();
        assert_eq!(e.to_string(), "end before start at line 1");
        let e = parse_scene_boundaries("0 10\n5 20".as_bytes(), "v", 100).unwrap_err();
        assert_eq!(e.to_string(), "overlap at line 2");
        let e = parse_scene_boundaries("20 30\n0 5".as_bytes(), "v", 100).unwrap_err();
        assert_eq!(e.kind, BoundaryErrorKind::NonMonotone);
        let e = parse_scene_boundaries("0 100".as_bytes(), "v", 100).unwrap_err();
        assert!(matches!(e.kind, BoundaryErrorKind::OutOfRange { .. }));
        let e = parse_scene_boundaries("0 1 2".as_bytes(), "v", 100).unwrap_err();
        assert!(matches!(e.kind, BoundaryErrorKind::Syntax(_)));
    }

    #[test]
    fn sampling_examples() {
        assert_eq!(sample_keyframes(&scene(0, 99), 4), vec![0, 33, 66, 99]);
        assert_eq!(sample_keyframes(&scene(10, 10), 4), vec![10]);
        assert_eq!(sample_keyframes(&scene(0, 2), 4), vec![0, 1, 2]);
        assert_eq!(sample_keyframes(&scene(0, 9), 1), vec![5]);
        assert_eq!(sample_keyframes(&scene(4, 4), 1), vec![4]);
    }

    fn unit2(angle_deg: f64) -> Vec<f32> {
        let a = angle_deg.to_radians();
        vec![a.cos() as f32, a.sin() as f32]
    }

    #[test]
    fn dedup_examples() {
        let cfg = DedupConfig::default();
        let same = [1.0f32, 0.0];
        let v: Vec<&[f32]> = vec![&same; 4];
        assert_eq!(dedup_scene(&[0, 1, 2, 3], &v, &cfg).unwrap(), vec![0]);

        let basis: Vec<Vec<f32>> = (0..4)
            .map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let refs: Vec<&[f32]> = basis.iter().map(Vec::as_slice).collect();
        assert_eq!(dedup_scene(&[0, 1, 2, 3], &refs, &cfg).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn dedup_compares_only_against_kept() {
        // f1 sits between f0 and f2 at acos(0.95) from each, so (f0, f2) ≈ 0.805.
        // f1 is rejected against f0; f2 is then only checked against f0 and kept
        // even though it is 0.95-similar to the discarded f1.
        let step = 0.95f64.acos().to_degrees();
        let (f0, f1, f2) = (unit2(0.0), unit2(step), unit2(2.0 * step));
        assert!((cosine(&f0, &f1) - 0.95).abs() < 1e-6);
        assert!((cosine(&f1, &f2) - 0.95).abs() < 1e-6);
        assert!(cosine(&f0, &f2) < 0.9);
        let refs: Vec<&[f32]> = vec![&f0, &f1, &f2];
        assert_eq!(
            dedup_scene(&[0, 1, 2], &refs, &DedupConfig::default()).unwrap(),
            vec![0, 2]
        );
    }

    #[test]
    fn dedup_threshold_is_strict() {
        let cfg = DedupConfig::default();
        let a = [1.0f32, 0.0];
        let b = [0.9f32, (1.0f32 - 0.81).sqrt()];
        assert_eq!(cosine(&a, &b), 0.9);
        assert_eq!(dedup_scene(&[0, 1], &[&a, &b], &cfg).unwrap(), vec![0, 1]);

        let one = DedupConfig {
            similarity_threshold: 1.0,
            ..cfg
        };
        assert_eq!(dedup_scene(&[0, 1], &[&a, &a], &one).unwrap(), vec![0, 1]);
    }

    #[test]
    fn dedup_input_errors() {
        let a = [1.0f32, 0.0];
        let cfg = DedupConfig::default();
        assert!(matches!(
            dedup_scene(&[0, 1], &[&a], &cfg),
            Err(IngestError::EmbeddingCountMismatch { .. })
        ));
        let long = [2.0f32, 0.0];
        assert!(matches!(
            dedup_scene(&[0], &[&long], &cfg),
            Err(IngestError::NotUnit { position: 0 })
        ));
        let bad = DedupConfig {
            similarity_threshold: 0.0,
            ..cfg
        };
        assert!(dedup_scene(&[0], &[&a], &bad).is_err());
    }

    fn input_one_video(scenes: &[(u32, u32)], frame_count: u32, emb: impl Fn(u32) -> Vec<f32>) -> IngestInput {
        let video = VideoDescriptor::new("v", Fps::new(25, 1).unwrap(), frame_count).unwrap();
        let b: Vec<SceneBoundary> = scenes
            .iter()
            .enumerate()
            .map(|(i, &(s, e))| SceneBoundary {
                video_id: "v".into(),
                scene_id: i as u32,
                start_frame: s,
                end_frame: e,
            })
            .collect();
        let fe = FrameEmbeddings::new("m", 8, (0..frame_count).map(|i| (i, emb(i)))).unwrap();
        IngestInput {
            videos: vec![video],
            boundaries: BTreeMap::from([("v".to_string(), b)]),
            embeddings: BTreeMap::from([("m".to_string(), BTreeMap::from([("v".to_string(), fe)]))]),
        }
    }

    #[test]
    fn ingest_distinct_frames_keeps_all() {
        let input = input_one_video(&[(0, 3), (4, 7)], 8, |i| {
            (0..8).map(|j| if j == i { 1.0 } else { 0.0 }).collect()
        });
        let out = run_ingest(&input, &IngestOptions::default()).unwrap();
        assert_eq!(out.report.frames_removed, 0);
        assert_eq!(out.report.frames_kept, out.report.frames_sampled);
        assert_eq!(out.report.frames_kept, 8);
        assert_eq!(out.manifest.len(), 8);
        assert_eq!(out.matrices[0].rows(), 8);
        assert!(out.report.is_consistent());
    }

    #[test]
    fn ingest_identical_scene_keeps_one() {
        let input = input_one_video(&[(0, 9)], 10, |_| vec![1.0; 8]);
        let out = run_ingest(&input, &IngestOptions::default()).unwrap();
        assert_eq!(out.report.frames_sampled, 4);
        assert_eq!(out.report.frames_kept, 1);
        assert_eq!(out.report.frames_removed, 3);
        assert_eq!(out.manifest.frames()[0].frame_index, 0);
    }

    #[test]
    fn ingest_missing_inputs_names_videos() {
        let mut input = input_one_video(&[(0, 9)], 10, |_| vec![1.0; 8]);
        input.videos.push(VideoDescriptor::new("w", Fps::new(25, 1).unwrap(), 5).unwrap());
        match run_ingest(&input, &IngestOptions::default()) {
            Err(IngestError::MissingInputs { video_ids, .. }) => assert_eq!(video_ids, vec!["w"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ingest_is_byte_deterministic() {
        let input = input_one_video(&[(0, 4), (5, 9)], 10, |i| {
            (0..8).map(|j| ((i * 7 + j) % 5) as f32 + 0.5).collect()
        });
        let a = run_ingest(&input, &IngestOptions::default()).unwrap();
        let b = run_ingest(&input, &IngestOptions::default()).unwrap();
        assert_eq!(a.manifest.to_bytes(), b.manifest.to_bytes());
        assert_eq!(a.matrices[0].to_bytes(), b.matrices[0].to_bytes());
    }

    #[test]
    fn video_table_parse() {
        let vids = parse_video_table("video_id fps frame_count\nb 25 100\na 30000/1001 50\n".as_bytes()).unwrap();
        assert_eq!(vids.len(), 2);
        assert_eq!(vids[1].fps, Fps::new(30000, 1001).unwrap());
        assert!(parse_video_table("h\nx 25\n".as_bytes()).is_err());
    }

    fn random_unit(dim: usize) -> impl Strategy<Value = Vec<f32>> {
        prop::collection::vec(-1.0f32..1.0, dim)
            .prop_filter("nonzero", |v| crate::embedding::norm(v) > 1e-2)
            .prop_map(|mut v| {
                crate::embedding::normalize_in_place(&mut v);
                v
            })
    }

    proptest! {
        #[test]
        fn dedup_idempotent_and_nonempty(
            vecs in prop::collection::vec(random_unit(3), 1..8),
            threshold in 0.05f32..1.0,
        ) {
            let cfg = DedupConfig { similarity_threshold: threshold, frames_per_scene: 4 };
            let idx: Vec<u32> = (0..vecs.len() as u32).collect();
            let refs: Vec<&[f32]> = vecs.iter().map(Vec::as_slice).collect();
            let kept = dedup_scene(&idx, &refs, &cfg).unwrap();
            prop_assert!(!kept.is_empty());
            prop_assert_eq!(kept[0], 0);
            let kept_refs: Vec<&[f32]> = kept.iter().map(|&i| refs[i as usize]).collect();
            prop_assert_eq!(dedup_scene(&kept, &kept_refs, &cfg).unwrap(), kept.clone());
            for (a, &i) in kept.iter().enumerate() {
                for &j in &kept[a + 1..] {
                    prop_assert!(cosine(refs[i as usize], refs[j as usize]) <= threshold);
                }
            }
        }

        #[test]
        fn sampling_inside_scene(start in 0u32..10_000, len in 1u32..500, n in 1usize..9) {
            let s = scene(start, start + len - 1);
            let out = sample_keyframes(&s, n);
            prop_assert!(out.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(out.iter().all(|&i| i >= s.start_frame && i <= s.end_frame));
            prop_assert_eq!(out.len(), n.min(len as usize));
            if n >= 2 {
                prop_assert_eq!(out[0], s.start_frame);
                prop_assert_eq!(*out.last().unwrap(), s.end_frame);
            }
        }
    }
}
