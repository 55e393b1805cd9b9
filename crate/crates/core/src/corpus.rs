//! Shared corpus types and the canonical frame keying scheme.
//!
//! Every kept keyframe gets a dense global [`FrameKey`] equal to its row in
//! manifest order. Manifest order is lexicographic by `(video_id,
//! frame_index)`, so within one video key order is temporal order and
//! "neighbor" is plain key arithmetic bounded by the video's key span.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("duplicate frame ({video_id}, {frame_index})")]
    DuplicateFrame { video_id: String, frame_index: u32 },
    #[error("duplicate video id {0:?}")]
    DuplicateVideo(String),
    #[error("unknown video id {0:?}")]
    UnknownVideo(String),
    #[error("invalid video id {0:?}: must be non-empty and contain no whitespace")]
    InvalidVideoId(String),
    #[error("frame index {frame_index} out of range for video {video_id:?} ({frame_count} frames)")]
    FrameOutOfRange {
        video_id: String,
        frame_index: u32,
        frame_count: u32,
    },
    #[error("invalid video {video_id:?}: {reason}")]
    InvalidVideo { video_id: String, reason: String },
    #[error("invalid fps {0:?}")]
    InvalidFps(String),
    #[error("manifest line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("manifest corpus hash mismatch: header {header}, computed {computed}")]
    HashMismatch { header: String, computed: String },
    #[error("invalid corpus hash {0:?}")]
    InvalidHash(String),
    #[error("unsupported manifest version {0}")]
    UnsupportedVersion(u32),
    #[error("invalid frame key {0}")]
    InvalidFrameKey(i64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Global dense keyframe identifier; also the embedding-matrix row index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FrameKey(pub u32);

impl FrameKey {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for FrameKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Frame rate as a positive rational `num/den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fps {
    num: u32,
    den: u32,
}

impl Fps {
    pub fn new(num: u32, den: u32) -> Result<Self, CorpusError> {
        if num == 0 || den == 0 {
            return Err(CorpusError::InvalidFps(format!("{num}/{den}")));
        }
        Ok(Self { num, den })
    }

    pub fn num(self) -> u32 {
        self.num
    }

    pub fn den(self) -> u32 {
        self.den
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn timestamp(self, frame_index: u32) -> f64 {
        frame_index as f64 * self.den as f64 / self.num as f64
    }
}

impl fmt::Display for Fps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

/// Accepts `25`, `30000/1001` or a decimal such as `29.97`.
impl FromStr for Fps {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CorpusError::InvalidFps(s.to_string());
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let num = n.trim().parse().map_err(|_| bad())?;
            let den = d.trim().parse().map_err(|_| bad())?;
            return Fps::new(num, den).map_err(|_| bad());
        }
        if let Some((int, frac)) = s.split_once('.') {
            if frac.is_empty() || frac.len() > 6 || !frac.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            let den = 10u32.pow(frac.len() as u32);
            let int: u32 = int.parse().map_err(|_| bad())?;
            let frac: u32 = frac.parse().map_err(|_| bad())?;
            let num = int
                .checked_mul(den)
                .and_then(|v| v.checked_add(frac))
                .ok_or_else(bad)?;
            let g = gcd(num, den);
            return Fps::new(num / g.max(1), den / g.max(1)).map_err(|_| bad());
        }
        Fps::new(s.parse().map_err(|_| bad())?, 1).map_err(|_| bad())
    }
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Serialize for Fps {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Fps {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoDescriptor {
    pub video_id: String,
    pub fps: Fps,
    pub frame_count: u32,
}

impl VideoDescriptor {
    pub fn new(video_id: impl Into<String>, fps: Fps, frame_count: u32) -> Result<Self, CorpusError> {
        let video = Self {
            video_id: video_id.into(),
            fps,
            frame_count,
        };
        video.validate()?;
        Ok(video)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        validate_video_id(&self.video_id)?;
        if self.frame_count == 0 {
            return Err(CorpusError::InvalidVideo {
                video_id: self.video_id.clone(),
                reason: "frame_count must be at least 1".into(),
            });
        }
        Ok(())
    }
}

pub(crate) fn validate_video_id(id: &str) -> Result<(), CorpusError> {
    if id.is_empty() || id.chars().any(char::is_whitespace) {
        return Err(CorpusError::InvalidVideoId(id.to_string()));
    }
    Ok(())
}

/// Inclusive frame interval of one detected scene.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneBoundary {
    pub video_id: String,
    pub scene_id: u32,
    pub start_frame: u32,
    pub end_frame: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_key: FrameKey,
    pub video_id: String,
    pub frame_index: u32,
    pub timestamp_s: f64,
    pub scene_id: u32,
}

/// SHA-256 digest over the canonical frame list.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct CorpusHash(pub [u8; 32]);

impl CorpusHash {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CorpusError> {
        let bytes = hex::decode(s).map_err(|_| CorpusError::InvalidHash(s.to_string()))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| CorpusError::InvalidHash(s.to_string()))?;
        Ok(Self(arr))
    }

    /// Canonical form: one `key\tvideo_id\tframe_index\tscene_id\n` line per frame.
    pub fn of_frames(frames: &[FrameRecord]) -> Self {
        let mut hasher = Sha256::new();
        for f in frames {
            hasher.update(format!("{}\t{}\t{}\t{}\n", f.frame_key, f.video_id, f.frame_index, f.scene_id));
        }
        Self(hasher.finalize().into())
    }
}

impl fmt::Debug for CorpusHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CorpusHash({})", self.to_hex())
    }
}

impl fmt::Display for CorpusHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for CorpusHash {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for CorpusHash {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        CorpusHash::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// A kept keyframe as produced by ingestion, before keys are assigned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeptFrame {
    pub video_id: String,
    pub frame_index: u32,
    pub scene_id: u32,
}

/// Ordered, immutable registry of the corpus.
#[derive(Debug, Clone)]
pub struct CorpusManifest {
    videos: Vec<VideoDescriptor>,
    frames: Vec<FrameRecord>,
    models: Vec<String>,
    created_at: String,
    corpus_hash: CorpusHash,
    by_video: HashMap<String, usize>,
    spans: Vec<Range<usize>>,
    lookup: HashMap<(String, u32), FrameKey>,
}

impl PartialEq for CorpusManifest {
    fn eq(&self, other: &Self) -> bool {
        self.videos == other.videos
            && self.frames == other.frames
            && self.models == other.models
            && self.created_at == other.created_at
            && self.corpus_hash == other.corpus_hash
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestHeader {
    version: u32,
    models: Vec<String>,
    corpus_hash: CorpusHash,
    created_at: String,
    frame_count: usize,
    videos: Vec<VideoDescriptor>,
}

/// Sorts kept frames, assigns dense keys and computes the corpus hash.
pub fn build_manifest(
    videos: Vec<VideoDescriptor>,
    kept_frames: Vec<KeptFrame>,
    model_ids: Vec<String>,
    created_at: impl Into<String>,
) -> Result<CorpusManifest, CorpusError> {
    let mut videos = videos;
    videos.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    for w in videos.windows(2) {
        if w[0].video_id == w[1].video_id {
            return Err(CorpusError::DuplicateVideo(w[0].video_id.clone()));
        }
    }
    for v in &videos {
        v.validate()?;
    }
    let table: HashMap<&str, &VideoDescriptor> =
        videos.iter().map(|v| (v.video_id.as_str(), v)).collect();

    let mut kept = kept_frames;
    kept.sort_by(|a, b| {
        a.video_id
            .cmp(&b.video_id)
            .then(a.frame_index.cmp(&b.frame_index))
    });
    let mut frames = Vec::with_capacity(kept.len());
    for (pos, k) in kept.into_iter().enumerate() {
        let video = table
            .get(k.video_id.as_str())
            .ok_or_else(|| CorpusError::UnknownVideo(k.video_id.clone()))?;
        if k.frame_index >= video.frame_count {
            return Err(CorpusError::FrameOutOfRange {
                video_id: k.video_id,
                frame_index: k.frame_index,
                frame_count: video.frame_count,
            });
        }
        if let Some(prev) = frames.last() {
            let prev: &FrameRecord = prev;
            if prev.video_id == k.video_id && prev.frame_index == k.frame_index {
                return Err(CorpusError::DuplicateFrame {
                    video_id: k.video_id,
                    frame_index: k.frame_index,
                });
            }
        }
        frames.push(FrameRecord {
            frame_key: FrameKey(pos as u32),
            timestamp_s: video.fps.timestamp(k.frame_index),
            video_id: k.video_id,
            frame_index: k.frame_index,
            scene_id: k.scene_id,
        });
    }
    let corpus_hash = CorpusHash::of_frames(&frames);
    Ok(CorpusManifest::assemble(
        videos,
        frames,
        model_ids,
        created_at.into(),
        corpus_hash,
    ))
}

impl CorpusManifest {
    fn assemble(
        videos: Vec<VideoDescriptor>,
        frames: Vec<FrameRecord>,
        models: Vec<String>,
        created_at: String,
        corpus_hash: CorpusHash,
    ) -> Self {
        let by_video: HashMap<String, usize> = videos
            .iter()
            .enumerate()
            .map(|(i, v)| (v.video_id.clone(), i))
            .collect();
        let mut spans = vec![0..0; videos.len()];
        let mut start = 0;
        while start < frames.len() {
            let vid = &frames[start].video_id;
            let mut end = start + 1;
            while end < frames.len() && frames[end].video_id == *vid {
                end += 1;
            }
            spans[by_video[vid]] = start..end;
            start = end;
        }
        let lookup = frames
            .iter()
            .map(|f| ((f.video_id.clone(), f.frame_index), f.frame_key))
            .collect();
        Self {
            videos,
            frames,
            models,
            created_at,
            corpus_hash,
            by_video,
            spans,
            lookup,
        }
    }

    pub fn videos(&self) -> &[VideoDescriptor] {
        &self.videos
    }

    pub fn frames(&self) -> &[FrameRecord] {
        &self.frames
    }

    pub fn models(&self) -> &[String] {
        &self.models
    }

    pub fn created_at(&self) -> &str {
        &self.created_at
    }

    pub fn corpus_hash(&self) -> CorpusHash {
        self.corpus_hash
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// An empty corpus is a valid manifest but cannot serve queries.
    pub fn usable(&self) -> bool {
        !self.frames.is_empty()
    }

    pub fn video(&self, video_id: &str) -> Option<&VideoDescriptor> {
        self.by_video.get(video_id).map(|&i| &self.videos[i])
    }

    pub fn frame(&self, key: FrameKey) -> Option<&FrameRecord> {
        self.frames.get(key.index())
    }

    /// Resolves a possibly out-of-range signed key.
    pub fn checked_key(&self, key: i64) -> Result<FrameKey, CorpusError> {
        if key >= 0 && (key as usize) < self.frames.len() {
            Ok(FrameKey(key as u32))
        } else {
            Err(CorpusError::InvalidFrameKey(key))
        }
    }

    pub fn key_of(&self, video_id: &str, frame_index: u32) -> Option<FrameKey> {
        self.lookup.get(&(video_id.to_string(), frame_index)).copied()
    }

    /// Key range occupied by a video's keyframes (empty if it kept none).
    pub fn video_span(&self, video_id: &str) -> Option<Range<usize>> {
        self.by_video.get(video_id).map(|&i| self.spans[i].clone())
    }

    /// Key span of the video containing `key`.
    pub fn span_of(&self, key: FrameKey) -> Option<Range<usize>> {
        self.frame(key).and_then(|f| self.video_span(&f.video_id))
    }

    pub fn same_video(&self, a: FrameKey, b: FrameKey) -> bool {
        match (self.frame(a), self.frame(b)) {
            (Some(x), Some(y)) => x.video_id == y.video_id,
            _ => false,
        }
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), CorpusError> {
        let header = ManifestHeader {
            version: MANIFEST_VERSION,
            models: self.models.clone(),
            corpus_hash: self.corpus_hash,
            created_at: self.created_at.clone(),
            frame_count: self.frames.len(),
            videos: self.videos.clone(),
        };
        serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        for f in &self.frames {
            serde_json::to_writer(&mut out, f).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Parses and fully re-validates a manifest, recomputing its hash.
    pub fn read_from<R: BufRead>(input: R) -> Result<Self, CorpusError> {
        let mut lines = input.lines();
        let header_line = lines.next().ok_or(CorpusError::Malformed {
            line: 1,
            reason: "missing header".into(),
        })??;
        let header: ManifestHeader =
            serde_json::from_str(&header_line).map_err(|e| CorpusError::Malformed {
                line: 1,
                reason: e.to_string(),
            })?;
        if header.version != MANIFEST_VERSION {
            return Err(CorpusError::UnsupportedVersion(header.version));
        }
        let mut seen = HashSet::new();
        for v in &header.videos {
            v.validate()?;
            if !seen.insert(v.video_id.as_str()) {
                return Err(CorpusError::DuplicateVideo(v.video_id.clone()));
            }
        }
        if header
            .videos
            .windows(2)
            .any(|w| w[0].video_id >= w[1].video_id)
        {
            return Err(CorpusError::Malformed {
                line: 1,
                reason: "videos not sorted by id".into(),
            });
        }
        let table: HashMap<&str, &VideoDescriptor> = header
            .videos
            .iter()
            .map(|v| (v.video_id.as_str(), v))
            .collect();

        let mut frames: Vec<FrameRecord> = Vec::with_capacity(header.frame_count);
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let malformed = |reason: String| CorpusError::Malformed {
                line: line_no,
                reason,
            };
            let f: FrameRecord = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
            if f.frame_key.index() != frames.len() {
                return Err(malformed(format!(
                    "frame_key {} out of sequence (expected {})",
                    f.frame_key,
                    frames.len()
                )));
            }
            let video = table
                .get(f.video_id.as_str())
                .ok_or_else(|| CorpusError::UnknownVideo(f.video_id.clone()))?;
            if f.frame_index >= video.frame_count {
                return Err(CorpusError::FrameOutOfRange {
                    video_id: f.video_id,
                    frame_index: f.frame_index,
                    frame_count: video.frame_count,
                });
            }
            let expected = video.fps.timestamp(f.frame_index);
            if (f.timestamp_s - expected).abs() > 1e-9 * expected.abs().max(1.0) {
                return Err(malformed(format!(
                    "timestamp {} inconsistent with fps (expected {expected})",
                    f.timestamp_s
                )));
            }
            if let Some(prev) = frames.last() {
                let order = prev
                    .video_id
                    .cmp(&f.video_id)
                    .then(prev.frame_index.cmp(&f.frame_index));
                if order != Ordering::Less {
                    return Err(malformed("frames not in (video_id, frame_index) order".into()));
                }
            }
            frames.push(f);
        }
        if frames.len() != header.frame_count {
            return Err(CorpusError::Malformed {
                line: frames.len() + 2,
                reason: format!(
                    "header declares {} frames, found {}",
                    header.frame_count,
                    frames.len()
                ),
            });
        }
        let computed = CorpusHash::of_frames(&frames);
        if computed != header.corpus_hash {
            return Err(CorpusError::HashMismatch {
                header: header.corpus_hash.to_hex(),
                computed: computed.to_hex(),
            });
        }
        Ok(Self::assemble(
            header.videos,
            frames,
            header.models,
            header.created_at,
            computed,
        ))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), CorpusError> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CorpusError> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub frame_key: FrameKey,
    pub score: f64,
}

/// Descending by score, ties by ascending key.
pub fn rank_order(a: &RankedEntry, b: &RankedEntry) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.frame_key.cmp(&b.frame_key))
}

/// Ordered `(frame_key, score)` pairs: scores non-increasing, ties by
/// ascending key, no duplicate keys.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RankedList {
    entries: Vec<RankedEntry>,
}

impl RankedList {
    /// Sorts into canonical order. Later duplicates of a key are dropped.
    pub fn from_unsorted(entries: impl IntoIterator<Item = (FrameKey, f64)>) -> Self {
        let mut seen = HashSet::new();
        let mut entries: Vec<RankedEntry> = entries
            .into_iter()
            .filter(|(k, _)| seen.insert(*k))
            .map(|(frame_key, score)| RankedEntry { frame_key, score })
            .collect();
        entries.sort_by(rank_order);
        Self { entries }
    }

    pub fn entries(&self) -> &[RankedEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = FrameKey> + '_ {
        self.entries.iter().map(|e| e.frame_key)
    }

    pub fn truncate(&mut self, len: usize) {
        self.entries.truncate(len);
    }

    pub fn iter(&self) -> std::slice::Iter<'_, RankedEntry> {
        self.entries.iter()
    }

    pub fn is_canonical(&self) -> bool {
        let mut seen = HashSet::new();
        self.entries.iter().all(|e| seen.insert(e.frame_key))
            && self
                .entries
                .windows(2)
                .all(|w| rank_order(&w[0], &w[1]) == Ordering::Less)
    }
}

impl<'a> IntoIterator for &'a RankedList {
    type Item = &'a RankedEntry;
    type IntoIter = std::slice::Iter<'a, RankedEntry>;

    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}
