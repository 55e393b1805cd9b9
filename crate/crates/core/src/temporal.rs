//! Dual-query temporal localization around an anchor keyframe.
//!
//! From the anchor we walk left scoring each keyframe against the start
//! query, and right scoring against the end query, one manifest step at a
//! time within the anchor's video. A walk stops at the video boundary, at
//! the first score below the floor, or after `max_steps` accepted frames.
//! The moment is then the `(start, end)` pair from the two candidate sets,
//! anchor included in both, that maximizes the summed scores subject to
//! `end - start <= gap_c` keyframe steps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, CorpusManifest, FrameKey};
use crate::encoder::QueryEmbedding;
use crate::index::FlatIndex;

#[derive(Debug, Error)]
pub enum TemporalError {
    #[error("max_steps must be at least 1")]
    ZeroSteps,
    #[error("similarity floor must be finite")]
    InvalidFloor,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("index for model {model_id} does not belong to this manifest")]
    IndexMismatch { model_id: String },
    #[error("query dim {query} does not match index dim {index}")]
    DimMismatch { query: usize, index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalConfig {
    pub max_steps: u32,
    pub similarity_floor: f64,
    pub gap_c: u32,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        Self {
            max_steps: 20,
            similarity_floor: 0.2,
            gap_c: 50,
        }
    }
}

impl TemporalConfig {
    pub fn validate(&self) -> Result<(), TemporalError> {
        if self.max_steps == 0 {
            return Err(TemporalError::ZeroSteps);
        }
        if !self.similarity_floor.is_finite() {
            return Err(TemporalError::InvalidFloor);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredFrame {
    pub frame_key: FrameKey,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSelection {
    pub start_key: FrameKey,
    pub end_key: FrameKey,
    pub anchor_key: FrameKey,
    pub start_score: f64,
    pub end_score: f64,
    pub video_id: String,
}

impl MomentSelection {
    pub fn span(&self) -> u32 {
        self.end_key.0 - self.start_key.0
    }

    pub fn objective(&self) -> f64 {
        self.start_score + self.end_score
    }

    /// Checks ordering and same-video membership, plus the gap bound when
    /// given.
    pub fn validate(&self, manifest: &CorpusManifest, gap_c: Option<u32>) -> Result<(), String> {
        if !(self.start_key <= self.anchor_key && self.anchor_key <= self.end_key) {
            return Err("moment must satisfy start <= anchor <= end".into());
        }
        for key in [self.start_key, self.anchor_key, self.end_key] {
            match manifest.frame(key) {
                Some(f) if f.video_id == self.video_id => {}
                Some(_) => return Err(format!("frame {key} is not in video {}", self.video_id)),
                None => return Err(format!("unknown frame key {key}")),
            }
        }
        if let Some(gap) = gap_c {
            if self.span() > gap {
                return Err(format!("moment spans {} keyframes, limit {gap}", self.span()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalResult {
    pub moment: MomentSelection,
    /// Start-query candidates in temporal order, anchor last.
    pub start_candidates: Vec<ScoredFrame>,
    /// End-query candidates in temporal order, anchor first.
    pub end_candidates: Vec<ScoredFrame>,
}

fn check_inputs(
    q: &QueryEmbedding,
    index: &FlatIndex,
    manifest: &CorpusManifest,
) -> Result<(), TemporalError> {
    if index.corpus_hash() != manifest.corpus_hash() || index.len() != manifest.len() {
        return Err(TemporalError::IndexMismatch {
            model_id: index.model_id().to_string(),
        });
    }
    if q.dim() != index.dim() {
        return Err(TemporalError::DimMismatch {
            query: q.dim(),
            index: index.dim(),
        });
    }
    Ok(())
}

/// Walks away from the anchor (excluded), nearest frame first.
pub fn expand(
    anchor: FrameKey,
    q: &QueryEmbedding,
    direction: Direction,
    config: &TemporalConfig,
    index: &FlatIndex,
    manifest: &CorpusManifest,
) -> Result<Vec<ScoredFrame>, TemporalError> {
    config.validate()?;
    check_inputs(q, index, manifest)?;
    let span = manifest
        .span_of(anchor)
        .ok_or(CorpusError::InvalidFrameKey(anchor.0 as i64))?;
    let step: i64 = match direction {
        Direction::Left => -1,
        Direction::Right => 1,
    };
    let mut out = Vec::new();
    let mut key = anchor.0 as i64;
    while out.len() < config.max_steps as usize {
        key += step;
        if key < span.start as i64 || key >= span.end as i64 {
            break;
        }
        let Some(score) = index.score_one(q, key) else {
            break;
        };
        if score < config.similarity_floor {
            break;
        }
        out.push(ScoredFrame {
            frame_key: FrameKey(key as u32),
            score,
        });
    }
    Ok(out)
}

/// Best feasible pair over the candidate sets. Ties prefer the shorter
/// span, then the earlier start. `left` must end with the anchor and
/// `right` start with it, so `(anchor, anchor)` is always feasible.
pub fn best_pair(left: &[ScoredFrame], right: &[ScoredFrame], gap_c: u32) -> Option<(ScoredFrame, ScoredFrame)> {
    let mut best: Option<(ScoredFrame, ScoredFrame)> = None;
    for s in left {
        for e in right {
            if s.frame_key > e.frame_key || e.frame_key.0 - s.frame_key.0 > gap_c {
                continue;
            }
            let better = match &best {
                None => true,
                Some((bs, be)) => {
                    let value = s.score + e.score;
                    let best_value = bs.score + be.score;
                    let span = e.frame_key.0 - s.frame_key.0;
                    let best_span = be.frame_key.0 - bs.frame_key.0;
                    value > best_value
                        || (value == best_value
                            && (span < best_span
                                || (span == best_span && s.frame_key < bs.frame_key)))
                }
            };
            if better {
                best = Some((*s, *e));
            }
        }
    }
    best
}

pub fn find_best_frame_pair(
    q_start: &QueryEmbedding,
    q_end: &QueryEmbedding,
    anchor: FrameKey,
    config: &TemporalConfig,
    index: &FlatIndex,
    manifest: &CorpusManifest,
) -> Result<TemporalResult, TemporalError> {
    let frame = manifest
        .frame(anchor)
        .ok_or(CorpusError::InvalidFrameKey(anchor.0 as i64))?;
    let (left, right) = rayon::join(
        || expand(anchor, q_start, Direction::Left, config, index, manifest),
        || expand(anchor, q_end, Direction::Right, config, index, manifest),
    );
    let (left, right) = (left?, right?);
    check_inputs(q_start, index, manifest)?;
    check_inputs(q_end, index, manifest)?;
    let anchor_start = index.score_one(q_start, anchor.0 as i64).unwrap_or(f64::NEG_INFINITY);
    let anchor_end = index.score_one(q_end, anchor.0 as i64).unwrap_or(f64::NEG_INFINITY);

    let mut start_candidates: Vec<ScoredFrame> = left.into_iter().rev().collect();
    start_candidates.push(ScoredFrame {
        frame_key: anchor,
        score: anchor_start,
    });
    let mut end_candidates = vec![ScoredFrame {
        frame_key: anchor,
        score: anchor_end,
    }];
    end_candidates.extend(right);

    let (s, e) = best_pair(&start_candidates, &end_candidates, config.gap_c)
        .expect("(anchor, anchor) is always feasible");
    Ok(TemporalResult {
        moment: MomentSelection {
            start_key: s.frame_key,
            end_key: e.frame_key,
            anchor_key: anchor,
            start_score: s.score,
            end_score: e.score,
            video_id: frame.video_id.clone(),
        },
        start_candidates,
        end_candidates,
    })
}
