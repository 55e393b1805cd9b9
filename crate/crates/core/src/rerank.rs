//! Neighbor score aggregation.
//!
//! A candidate's new score is the plain sum of the query's similarity with
//! every keyframe in its same-video window `[key - radius, key + radius]`.
//! Windows are clipped at video boundaries, so edge frames sum fewer terms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, CorpusManifest, FrameKey, RankedList};
use crate::encoder::QueryEmbedding;
use crate::index::FlatIndex;

pub const MAX_RADIUS: u32 = 64;

#[derive(Debug, Error)]
pub enum RerankError {
    #[error("rerank radius {0} exceeds {MAX_RADIUS}")]
    RadiusTooLarge(u32),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("index for model {model_id} does not belong to this manifest")]
    IndexMismatch { model_id: String },
    #[error("query dim {query} does not match index dim {index}")]
    DimMismatch { query: usize, index: usize },
}

fn default_radius() -> u32 {
    2
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerankConfig {
    #[serde(default = "default_radius")]
    pub radius: u32,
    #[serde(default = "default_true")]
    pub include_center: bool,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            radius: default_radius(),
            include_center: true,
        }
    }
}

impl RerankConfig {
    pub fn with_radius(radius: u32) -> Self {
        Self {
            radius,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RerankError> {
        if self.radius > MAX_RADIUS {
            return Err(RerankError::RadiusTooLarge(self.radius));
        }
        Ok(())
    }
}

/// Same-video keys within `radius` of `key`, ascending.
pub fn get_neighbors(
    key: FrameKey,
    config: &RerankConfig,
    manifest: &CorpusManifest,
) -> Result<Vec<FrameKey>, RerankError> {
    config.validate()?;
    let span = manifest
        .span_of(key)
        .ok_or(CorpusError::InvalidFrameKey(key.0 as i64))?;
    let k = key.index();
    let lo = k.saturating_sub(config.radius as usize).max(span.start);
    let hi = (k + config.radius as usize).min(span.end - 1);
    Ok((lo..=hi)
        .filter(|&i| config.include_center || i != k)
        .map(|i| FrameKey(i as u32))
        .collect())
}

/// Aggregated window score of one key.
pub fn window_score(
    key: FrameKey,
    q: &QueryEmbedding,
    config: &RerankConfig,
    index: &FlatIndex,
    manifest: &CorpusManifest,
) -> Result<f64, RerankError> {
    let mut total = 0.0;
    for n in get_neighbors(key, config, manifest)? {
        if let Some(s) = index.score_one(q, n.0 as i64) {
            total += s;
        }
    }
    Ok(total)
}

/// Rescores `candidates` by neighbor aggregation. Returns a permutation of
/// the input keys in canonical order.
pub fn rerank(
    candidates: &RankedList,
    q: &QueryEmbedding,
    config: &RerankConfig,
    index: &FlatIndex,
    manifest: &CorpusManifest,
) -> Result<RankedList, RerankError> {
    config.validate()?;
    if index.corpus_hash() != manifest.corpus_hash() || index.len() != manifest.len() {
        return Err(RerankError::IndexMismatch {
            model_id: index.model_id().to_string(),
        });
    }
    if q.dim() != index.dim() {
        return Err(RerankError::DimMismatch {
            query: q.dim(),
            index: index.dim(),
        });
    }
    let scored = candidates
        .keys()
        .map(|k| Ok((k, window_score(k, q, config, index, manifest)?)))
        .collect::<Result<Vec<_>, RerankError>>()?;
    Ok(RankedList::from_unsorted(scored))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_manifest, Fps, KeptFrame, VideoDescriptor};
    use crate::embedding::EmbeddingMatrix;
    use proptest::prelude::*;

    /// Two videos: "a" with `na` keyframes then "b" with `nb`.
    fn manifest(na: u32, nb: u32) -> CorpusManifest {
        let fps = Fps::new(1, 1).unwrap();
        let mut kept = Vec::new();
        for i in 0..na {
            kept.push(KeptFrame { video_id: "a".into(), frame_index: i, scene_id: 0 });
        }
        for i in 0..nb {
            kept.push(KeptFrame { video_id: "b".into(), frame_index: i, scene_id: 0 });
        }
        build_manifest(
            vec![
                VideoDescriptor::new("a", fps, na.max(1)).unwrap(),
                VideoDescriptor::new("b", fps, nb.max(1)).unwrap(),
            ],
            kept,
            vec!["m".into()],
            "t",
        )
        .unwrap()
    }

    /// 2-D rows whose dot with q = (1, 0) equals the given score.
    fn index_with_scores(m: &CorpusManifest, scores: &[f64]) -> FlatIndex {
        let data: Vec<f32> = scores
            .iter()
            .flat_map(|&s| [s as f32, (1.0 - s * s).max(0.0).sqrt() as f32])
            .collect();
        FlatIndex::new(EmbeddingMatrix::from_raw("m", 2, data, m.corpus_hash()).unwrap())
    }

    fn q() -> QueryEmbedding {
        QueryEmbedding::new("m", vec![1.0, 0.0]).unwrap()
    }

    fn keys(v: &[FrameKey]) -> Vec<u32> {
        v.iter().map(|k| k.0).collect()
    }

    #[test]
    fn neighbor_windows() {
        let m = manifest(6, 4);
        let r0 = RerankConfig::with_radius(0);
        assert_eq!(keys(&get_neighbors(FrameKey(3), &r0, &m).unwrap()), vec![3]);
        let r2 = RerankConfig::with_radius(2);
        assert_eq!(keys(&get_neighbors(FrameKey(0), &r2, &m).unwrap()), vec![0, 1, 2]);
        assert_eq!(keys(&get_neighbors(FrameKey(3), &r2, &m).unwrap()), vec![1, 2, 3, 4, 5]);
        // last of "a" must not see "b"
        assert_eq!(keys(&get_neighbors(FrameKey(5), &r2, &m).unwrap()), vec![3, 4, 5]);
        assert_eq!(keys(&get_neighbors(FrameKey(6), &r2, &m).unwrap()), vec![6, 7, 8]);
        let no_center = RerankConfig { radius: 1, include_center: false };
        assert_eq!(keys(&get_neighbors(FrameKey(7), &no_center, &m).unwrap()), vec![6, 8]);
        assert!(get_neighbors(FrameKey(10), &r2, &m).is_err());
        assert!(matches!(
            get_neighbors(FrameKey(0), &RerankConfig::with_radius(65), &m),
            Err(RerankError::RadiusTooLarge(65))
        ));
    }

    #[test]
    fn stable_neighborhood_beats_isolated_peak() {
        // video a: [0.9, 0.9, 0.9] ; video b: [0.0, 1.0, 0.0]
        let m = manifest(3, 3);
        let idx = index_with_scores(&m, &[0.9, 0.9, 0.9, 0.0, 1.0, 0.0]);
        let candidates = RankedList::from_unsorted(vec![(FrameKey(4), 1.0), (FrameKey(1), 0.9)]);
        let out = rerank(&candidates, &q(), &RerankConfig::with_radius(1), &idx, &m).unwrap();
        assert_eq!(out.entries()[0].frame_key, FrameKey(1));
        assert!((out.entries()[0].score - 2.7).abs() < 1e-6);
        assert!((out.entries()[1].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn radius_zero_rescoring() {
        let m = manifest(4, 2);
        let scores = [0.1, 0.7, 0.3, 0.5, 0.9, 0.2];
        let idx = index_with_scores(&m, &scores);
        let base = idx.search(&q(), 6).unwrap();
        let out = rerank(&base, &q(), &RerankConfig::with_radius(0), &idx, &m).unwrap();
        assert_eq!(out.keys().collect::<Vec<_>>(), base.keys().collect::<Vec<_>>());
    }

    #[test]
    fn identical_corpus_is_tie_broken_by_key() {
        let m = manifest(5, 0);
        let idx = index_with_scores(&m, &[0.5; 5]);
        let cands = RankedList::from_unsorted((0..5).map(|i| (FrameKey(i), 0.5)));
        let out = rerank(&cands, &q(), &RerankConfig::with_radius(0), &idx, &m).unwrap();
        assert_eq!(out.keys().map(|k| k.0).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn mismatched_index_rejected() {
        let m = manifest(3, 0);
        let other = manifest(4, 0);
        let idx = index_with_scores(&other, &[0.1; 4]);
        let cands = RankedList::from_unsorted(vec![(FrameKey(0), 1.0)]);
        assert!(matches!(
            rerank(&cands, &q(), &RerankConfig::default(), &idx, &m),
            Err(RerankError::IndexMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn rerank_permutes_candidates(
            na in 1u32..20,
            nb in 0u32..20,
            seed in any::<u64>(),
            radius in 0u32..6,
            depth in 1usize..40,
        ) {
            use rand::{Rng, SeedableRng};
            let m = manifest(na, nb);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let scores: Vec<f64> = (0..m.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let idx = index_with_scores(&m, &scores);
            let base = idx.search(&q(), depth).unwrap();
            let out = rerank(&base, &q(), &RerankConfig::with_radius(radius), &idx, &m).unwrap();
            prop_assert!(out.is_canonical());
            let mut a: Vec<u32> = base.keys().map(|k| k.0).collect();
            let mut b: Vec<u32> = out.keys().map(|k| k.0).collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
            if radius == 0 {
                prop_assert!(out.keys().eq(base.keys()));
            }
        }
    }
}
