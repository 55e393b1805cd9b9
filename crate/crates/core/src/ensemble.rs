//! Weighted late fusion across embedding models.
//!
//! Every enabled model encodes the query, retrieves its top-M, divides its
//! scores by its own best retrieved score and adds `weight * s / s_max`
//! into a per-frame accumulator. Frames missing from a model's top-M simply
//! get no term from that model.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{FrameKey, RankedList};
use crate::encoder::{EncodeError, QueryEmbedding, TextEncoder};
use crate::index::{FlatIndex, IndexError};

pub const DEFAULT_DEPTH: usize = 50;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("no enabled models in ensemble request")]
    NoEnabledModels,
    #[error("enabled model weights sum to zero")]
    ZeroWeights,
    #[error("invalid weight {weight} for model {model_id}")]
    InvalidWeight { model_id: String, weight: f64 },
    #[error("unknown model {0}")]
    UnknownModel(String),
    #[error("model {0} listed twice")]
    DuplicateModel(String),
    #[error("search depth must be at least 1")]
    ZeroDepth,
    #[error("model {model_id}: {source}")]
    Encode {
        model_id: String,
        #[source]
        source: EncodeError,
    },
    #[error("model {model_id}: {source}")]
    Index {
        model_id: String,
        #[source]
        source: IndexError,
    },
}

fn default_enabled() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_id: String,
    pub weight: f64,
    #[serde(default = "default_enabled")]
    pub enabled: bool,
}

impl ModelConfig {
    pub fn new(model_id: impl Into<String>, weight: f64) -> Self {
        Self {
            model_id: model_id.into(),
            weight,
            enabled: true,
        }
    }

    pub fn disabled(model_id: impl Into<String>, weight: f64) -> Self {
        Self {
            enabled: false,
            ..Self::new(model_id, weight)
        }
    }
}

/// Scales enabled weights to sum to one; disabled entries pass through.
pub fn normalize_weights(configs: &[ModelConfig]) -> Result<Vec<ModelConfig>, EnsembleError> {
    for c in configs {
        if !c.weight.is_finite() || c.weight < 0.0 {
            return Err(EnsembleError::InvalidWeight {
                model_id: c.model_id.clone(),
                weight: c.weight,
            });
        }
    }
    if !configs.iter().any(|c| c.enabled) {
        return Err(EnsembleError::NoEnabledModels);
    }
    let total: f64 = configs.iter().filter(|c| c.enabled).map(|c| c.weight).sum();
    if total <= 0.0 {
        return Err(EnsembleError::ZeroWeights);
    }
    Ok(configs
        .iter()
        .map(|c| {
            if c.enabled {
                ModelConfig {
                    weight: c.weight / total,
                    ..c.clone()
                }
            } else {
                c.clone()
            }
        })
        .collect())
}

/// An index paired with the encoder that produces its query vectors.
#[derive(Clone)]
pub struct ModelHandle {
    pub index: Arc<FlatIndex>,
    pub encoder: Arc<dyn TextEncoder>,
}

/// Loaded models keyed by id, iterated in id order.
#[derive(Clone, Default)]
pub struct ModelRegistry {
    models: BTreeMap<String, ModelHandle>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, index: FlatIndex, encoder: Arc<dyn TextEncoder>) {
        self.models.insert(
            index.model_id().to_string(),
            ModelHandle {
                index: Arc::new(index),
                encoder,
            },
        );
    }

    pub fn get(&self, model_id: &str) -> Option<&ModelHandle> {
        self.models.get(model_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

/// One enabled model's contribution to a fused search.
#[derive(Debug, Clone)]
pub struct ModelRun {
    pub model_id: String,
    pub weight: f64,
    pub query: QueryEmbedding,
    pub results: RankedList,
    /// Best retrieved score; `None` when the list was empty.
    pub max_score: Option<f64>,
    pub skipped: bool,
}

impl ModelRun {
    pub fn raw_scores(&self) -> HashMap<FrameKey, f64> {
        self.results.iter().map(|e| (e.frame_key, e.score)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleOutcome {
    pub fused: RankedList,
    /// Enabled models in request order.
    pub runs: Vec<ModelRun>,
    pub warnings: Vec<String>,
}

/// Accumulates normalized, weighted scores in `runs` order.
pub fn fuse(runs: &mut [ModelRun]) -> (RankedList, Vec<String>) {
    let mut acc: BTreeMap<FrameKey, f64> = BTreeMap::new();
    let mut warnings = Vec::new();
    for run in runs.iter_mut() {
        let s_max = match run.max_score {
            Some(s) if s > 0.0 => s,
            Some(s) => {
                warnings.push(format!(
                    "model {} skipped: best retrieved score {s} is not positive",
                    run.model_id
                ));
                run.skipped = true;
                continue;
            }
            None => {
                warnings.push(format!("model {} skipped: no results", run.model_id));
                run.skipped = true;
                continue;
            }
        };
        for e in run.results.iter() {
            *acc.entry(e.frame_key).or_insert(0.0) += e.score / s_max * run.weight;
        }
    }
    (RankedList::from_unsorted(acc), warnings)
}

pub fn ensemble_search(
    query: &str,
    configs: &[ModelConfig],
    models: &ModelRegistry,
    depth: usize,
) -> Result<EnsembleOutcome, EnsembleError> {
    if depth == 0 {
        return Err(EnsembleError::ZeroDepth);
    }
    let configs = normalize_weights(configs)?;
    let mut seen = std::collections::HashSet::new();
    for c in &configs {
        if !seen.insert(c.model_id.as_str()) {
            return Err(EnsembleError::DuplicateModel(c.model_id.clone()));
        }
    }
    let enabled: Vec<&ModelConfig> = configs.iter().filter(|c| c.enabled).collect();
    for c in &enabled {
        if models.get(&c.model_id).is_none() {
            return Err(EnsembleError::UnknownModel(c.model_id.clone()));
        }
    }
    let mut runs = enabled
        .par_iter()
        .map(|c| {
            let handle = models.get(&c.model_id).expect("checked above");
            let q = handle
                .encoder
                .encode(query)
                .map_err(|source| EnsembleError::Encode {
                    model_id: c.model_id.clone(),
                    source,
                })?;
            let results = handle
                .index
                .search(&q, depth)
                .map_err(|source| EnsembleError::Index {
                    model_id: c.model_id.clone(),
                    source,
                })?;
            Ok(ModelRun {
                model_id: c.model_id.clone(),
                weight: c.weight,
                query: q,
                max_score: results.entries().first().map(|e| e.score),
                results,
                skipped: false,
            })
        })
        .collect::<Result<Vec<_>, EnsembleError>>()?;
    let (fused, warnings) = fuse(&mut runs);
    Ok(EnsembleOutcome {
        fused,
        runs,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusHash;
    use crate::embedding::EmbeddingMatrix;
    use crate::encoder::StubEncoder;
    use proptest::prelude::*;

    fn weights(cfgs: &[ModelConfig]) -> Vec<f64> {
        normalize_weights(cfgs).unwrap().iter().map(|c| c.weight).collect()
    }

    #[test]
    fn weight_normalization() {
        assert_eq!(weights(&[ModelConfig::new("a", 2.0), ModelConfig::new("b", 2.0)]), vec![0.5, 0.5]);
        assert_eq!(weights(&[ModelConfig::new("a", 1.0), ModelConfig::new("b", 3.0)]), vec![0.25, 0.75]);
        let out = normalize_weights(&[ModelConfig::new("a", 1.0), ModelConfig::disabled("b", 5.0)]).unwrap();
        assert_eq!(out[0].weight, 1.0);
        assert_eq!(out[1], ModelConfig::disabled("b", 5.0));
    }

    #[test]
    fn weight_errors() {
        assert!(matches!(
            normalize_weights(&[ModelConfig::new("a", 0.0), ModelConfig::new("b", 0.0)]),
            Err(EnsembleError::ZeroWeights)
        ));
        assert!(matches!(
            normalize_weights(&[ModelConfig::disabled("a", 1.0)]),
            Err(EnsembleError::NoEnabledModels)
        ));
        assert!(matches!(
            normalize_weights(&[ModelConfig::new("a", -1.0)]),
            Err(EnsembleError::InvalidWeight { .. })
        ));
    }

    fn run(model: &str, entries: &[(u32, f64)], weight: f64) -> ModelRun {
        let results = RankedList::from_unsorted(entries.iter().map(|&(k, s)| (FrameKey(k), s)));
        ModelRun {
            model_id: model.into(),
            weight,
            query: QueryEmbedding::new(model, vec![1.0]).unwrap(),
            max_score: results.entries().first().map(|e| e.score),
            results,
            skipped: false,
        }
    }

    #[test]
    fn shared_top_hit_fuses_to_one() {
        let mut runs = vec![
            run("a", &[(7, 0.4), (1, 0.2)], 0.5),
            run("b", &[(7, 0.8), (2, 0.6)], 0.5),
        ];
        let (fused, warnings) = fuse(&mut runs);
        assert!(warnings.is_empty());
        assert_eq!(fused.entries()[0].frame_key, FrameKey(7));
        assert!((fused.entries()[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_positive_max_is_skipped_with_warning() {
        let mut runs = vec![run("a", &[(1, 0.5)], 0.5), run("b", &[(2, -0.1), (3, -0.3)], 0.5)];
        let (fused, warnings) = fuse(&mut runs);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("model b"));
        assert!(runs[1].skipped);
        assert_eq!(fused.len(), 1);
        assert_eq!(fused.entries()[0].score, 0.5);
    }

    fn registry(models: &[(&str, usize)], n: usize) -> ModelRegistry {
        let mut reg = ModelRegistry::new();
        for &(id, dim) in models {
            let enc = StubEncoder::new(id, dim);
            let data: Vec<f32> = (0..n)
                .flat_map(|i| enc.encode(&format!("frame {i}")).unwrap().vector().to_vec())
                .collect();
            let m = EmbeddingMatrix::from_raw(id, dim, data, CorpusHash([0; 32])).unwrap();
            reg.insert(FlatIndex::new(m), Arc::new(enc));
        }
        reg
    }

    #[test]
    fn single_model_matches_plain_search() {
        let reg = registry(&[("a", 16)], 200);
        let out = ensemble_search("frame 5", &[ModelConfig::new("a", 3.0)], &reg, 50).unwrap();
        let handle = reg.get("a").unwrap();
        let q = handle.encoder.encode("frame 5").unwrap();
        let plain = handle.index.search(&q, 50).unwrap();
        assert_eq!(out.fused.keys().collect::<Vec<_>>(), plain.keys().collect::<Vec<_>>());
        let s_max = plain.entries()[0].score;
        for (f, p) in out.fused.iter().zip(plain.iter()) {
            assert!((f.score - p.score / s_max).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_and_duplicate_models() {
        let reg = registry(&[("a", 8)], 10);
        assert!(matches!(
            ensemble_search("q", &[ModelConfig::new("zzz", 1.0)], &reg, 5),
            Err(EnsembleError::UnknownModel(m)) if m == "zzz"
        ));
        assert!(matches!(
            ensemble_search("q", &[ModelConfig::new("a", 1.0), ModelConfig::new("a", 1.0)], &reg, 5),
            Err(EnsembleError::DuplicateModel(_))
        ));
        assert!(matches!(
            ensemble_search(" ", &[ModelConfig::new("a", 1.0)], &reg, 5),
            Err(EnsembleError::Encode { .. })
        ));
    }

    #[test]
    fn contribution_bounded_by_weight() {
        let reg = registry(&[("a", 16), ("b", 24)], 300);
        let cfgs = [ModelConfig::new("a", 0.7), ModelConfig::new("b", 0.3)];
        let out = ensemble_search("frame 12", &cfgs, &reg, 40).unwrap();
        for e in out.fused.iter() {
            assert!(e.score <= 1.0 + 1e-12);
        }
        for r in &out.runs {
            let in_top: std::collections::HashSet<_> = r.results.keys().collect();
            assert!(r.results.len() <= 40);
            assert!(!in_top.is_empty());
        }
        for key in out.fused.keys() {
            assert!(out.runs.iter().any(|r| r.results.keys().any(|k| k == key)));
        }
    }

    proptest! {
        #[test]
        fn fusion_is_weight_scale_invariant(
            a in prop::collection::vec((0u32..40, -1.0f64..1.0), 1..30),
            b in prop::collection::vec((0u32..40, -1.0f64..1.0), 1..30),
            wa in 0.01f64..1.0,
            wb in 0.01f64..1.0,
            scale in prop::sample::select(vec![0.1, 3.0, 10.0]),
        ) {
            let fused = |s: f64| {
                let cfgs = normalize_weights(&[ModelConfig::new("a", wa * s), ModelConfig::new("b", wb * s)]).unwrap();
                let mut runs = vec![run("a", &a, cfgs[0].weight), run("b", &b, cfgs[1].weight)];
                fuse(&mut runs).0
            };
            let base = fused(1.0);
            let scaled = fused(scale);
            prop_assert!(base.is_canonical());
            prop_assert!(base.keys().eq(scaled.keys()));
            for (x, y) in base.iter().zip(scaled.iter()) {
                prop_assert!((x.score - y.score).abs() < 1e-9);
            }
        }
    }
}
