//! Exact flat cosine index over one model's embedding matrix.
//!
//! Index file (`IDX1`), little-endian: magic, `u32` version, 64-byte model
//! id, 32-byte corpus hash, `u64` length of the embedded matrix, then the
//! matrix itself in `EMB1` form.

use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{rank_order, CorpusHash, CorpusManifest, FrameKey, RankedEntry, RankedList};
use crate::embedding::{decode_model_id, dot, encode_model_id, EmbeddingError, EmbeddingMatrix};
use crate::encoder::QueryEmbedding;

pub const INDEX_MAGIC: &[u8; 4] = b"IDX1";
pub const INDEX_VERSION: u32 = 1;
const INDEX_HEADER_LEN: usize = 4 + 4 + 64 + 32 + 8;

/// Rows scored per rayon task.
const PAR_CHUNK_ROWS: usize = 1024;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("query dim {query} does not match index dim {index}")]
    DimMismatch { query: usize, index: usize },
    #[error("query for model {query:?} sent to index of model {index:?}")]
    ModelMismatch { query: String, index: String },
    #[error("search depth must be at least 1")]
    ZeroDepth,
    #[error("index corpus hash {index} does not match manifest {manifest}")]
    HashMismatch { index: String, manifest: String },
    #[error("model {0:?} is not listed in the manifest")]
    UnknownModel(String),
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error("unsupported index version {0}")]
    UnsupportedVersion(u32),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    matrix: EmbeddingMatrix,
}

impl FlatIndex {
    pub fn new(matrix: EmbeddingMatrix) -> Self {
        Self { matrix }
    }

    pub fn model_id(&self) -> &str {
        self.matrix.model_id()
    }

    pub fn corpus_hash(&self) -> CorpusHash {
        self.matrix.corpus_hash()
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.rows() == 0
    }

    pub fn matrix(&self) -> &EmbeddingMatrix {
        &self.matrix
    }

    fn check_query(&self, q: &QueryEmbedding) -> Result<(), IndexError> {
        if q.model_id() != self.model_id() {
            return Err(IndexError::ModelMismatch {
                query: q.model_id().to_string(),
                index: self.model_id().to_string(),
            });
        }
        if q.dim() != self.dim() {
            return Err(IndexError::DimMismatch {
                query: q.dim(),
                index: self.dim(),
            });
        }
        Ok(())
    }

    /// Scores every row against `q`, in row order.
    pub fn score_all(&self, q: &QueryEmbedding) -> Result<Vec<f32>, IndexError> {
        self.check_query(q)?;
        let v = q.vector();
        let dim = self.dim();
        let mut scores = vec![0.0f32; self.len()];
        scores
            .par_chunks_mut(PAR_CHUNK_ROWS)
            .zip(self.matrix.as_slice().par_chunks(PAR_CHUNK_ROWS * dim))
            .for_each(|(out, rows)| {
                for (s, row) in out.iter_mut().zip(rows.chunks_exact(dim)) {
                    *s = dot(row, v).clamp(-1.0, 1.0);
                }
            });
        Ok(scores)
    }

    /// Exact top-`depth` rows by cosine similarity.
    pub fn search(&self, q: &QueryEmbedding, depth: usize) -> Result<RankedList, IndexError> {
        if depth == 0 {
            return Err(IndexError::ZeroDepth);
        }
        let scores = self.score_all(q)?;
        let mut entries: Vec<RankedEntry> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| RankedEntry {
                frame_key: FrameKey(i as u32),
                score: s as f64,
            })
            .collect();
        if depth < entries.len() {
            entries.select_nth_unstable_by(depth - 1, rank_order);
            entries.truncate(depth);
        }
        entries.sort_by(rank_order);
        Ok(RankedList::from_unsorted(
            entries.into_iter().map(|e| (e.frame_key, e.score)),
        ))
    }

    /// Cosine similarity with one row; `None` outside `[0, len)`.
    pub fn score_one(&self, q: &QueryEmbedding, frame_key: i64) -> Option<f64> {
        if frame_key < 0 || q.dim() != self.dim() {
            return None;
        }
        self.matrix
            .get(frame_key as usize)
            .map(|row| dot(row, q.vector()).clamp(-1.0, 1.0) as f64)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, IndexError> {
        let matrix = self.matrix.to_bytes();
        let mut out = Vec::with_capacity(INDEX_HEADER_LEN + matrix.len());
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        out.extend_from_slice(&encode_model_id(self.model_id())?);
        out.extend_from_slice(&self.corpus_hash().0);
        out.extend_from_slice(&(matrix.len() as u64).to_le_bytes());
        out.extend_from_slice(&matrix);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        if bytes.len() < INDEX_HEADER_LEN {
            return Err(IndexError::Corrupt(format!(
                "file is {} bytes, header needs {INDEX_HEADER_LEN}",
                bytes.len()
            )));
        }
        if &bytes[..4] != INDEX_MAGIC {
            return Err(IndexError::Corrupt("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != INDEX_VERSION {
            return Err(IndexError::UnsupportedVersion(version));
        }
        let model_id = decode_model_id(&bytes[8..72])?;
        let hash = CorpusHash(bytes[72..104].try_into().unwrap());
        let len = u64::from_le_bytes(bytes[104..112].try_into().unwrap());
        let payload = &bytes[INDEX_HEADER_LEN..];
        if payload.len() as u64 != len {
            return Err(IndexError::Corrupt(format!(
                "declared payload {len} bytes, found {}",
                payload.len()
            )));
        }
        let matrix = EmbeddingMatrix::from_bytes(payload)
            .map_err(|e| IndexError::Corrupt(format!("embedded matrix: {e}")))?;
        if matrix.model_id() != model_id || matrix.corpus_hash() != hash {
            return Err(IndexError::Corrupt(
                "index header disagrees with embedded matrix".into(),
            ));
        }
        Ok(Self { matrix })
    }

    /// Checks that the index belongs to `manifest`.
    pub fn verify_against(&self, manifest: &CorpusManifest) -> Result<(), IndexError> {
        if self.corpus_hash() != manifest.corpus_hash() {
            return Err(IndexError::HashMismatch {
                index: self.corpus_hash().to_hex(),
                manifest: manifest.corpus_hash().to_hex(),
            });
        }
        if !manifest.models().iter().any(|m| m == self.model_id()) {
            return Err(IndexError::UnknownModel(self.model_id().to_string()));
        }
        self.matrix.verify_against(manifest)?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path, manifest: &CorpusManifest) -> Result<Self, IndexError> {
        let index = Self::from_bytes(&std::fs::read(path)?)?;
        index.verify_against(manifest)?;
        Ok(index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cmp::Ordering;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix(dim: usize, rows: Vec<f32>) -> EmbeddingMatrix {
        EmbeddingMatrix::from_raw("m", dim, rows, CorpusHash([0; 32])).unwrap()
    }

    fn query(v: &[f32]) -> QueryEmbedding {
        QueryEmbedding::new("m", v.to_vec()).unwrap()
    }

    fn random_index(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> FlatIndex {
        let data: Vec<f32> = (0..n * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        FlatIndex::new(matrix(dim, data))
    }

    fn cmp_desc_then_key(a: &(usize, f32), b: &(usize, f32)) -> Ordering {
        b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0))
    }

    fn oracle(index: &FlatIndex, q: &QueryEmbedding, m: usize) -> Vec<(usize, f32)> {
        let mut all: Vec<(usize, f32)> = (0..index.len())
            .map(|i| {
                let row = index.matrix().row(i);
                let mut s = 0.0f32;
                for d in 0..row.len() {
                    s += row[d] * q.vector()[d];
                }
                (i, s.clamp(-1.0, 1.0))
            })
            .collect();
        all.sort_by(cmp_desc_then_key);
        all.truncate(m);
        all
    }

    #[test]
    fn self_match_ranks_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let idx = random_index(&mut rng, 50, 8);
        let q = query(idx.matrix().row(17));
        let top = idx.search(&q, 5).unwrap();
        assert_eq!(top.entries()[0].frame_key, FrameKey(17));
        assert!((top.entries()[0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn orthogonal_corpus() {
        let idx = FlatIndex::new(matrix(3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]));
        let top = idx.search(&query(&[1., 0., 0.]), 3).unwrap();
        let got: Vec<(u32, f64)> = top.iter().map(|e| (e.frame_key.0, e.score)).collect();
        assert_eq!(got, vec![(0, 1.0), (1, 0.0), (2, 0.0)]);
    }

    #[test]
    fn seeded_corpus_matches_full_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let idx = random_index(&mut rng, 1000, 32);
        for _ in 0..20 {
            let v: Vec<f32> = (0..32).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let q = query(&v);
            let got: Vec<(usize, f32)> = idx
                .search(&q, 50)
                .unwrap()
                .iter()
                .map(|e| (e.frame_key.index(), e.score as f32))
                .collect();
            assert_eq!(got, oracle(&idx, &q, 50));
        }
    }

    #[test]
    fn score_one_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let idx = random_index(&mut rng, 10, 4);
        let q = query(idx.matrix().row(3));
        assert_eq!(idx.score_one(&q, -1), None);
        assert_eq!(idx.score_one(&q, 10), None);
        assert!((idx.score_one(&q, 3).unwrap() - 1.0).abs() < 1e-6);
        let direct = dot(idx.matrix().row(7), q.vector()) as f64;
        assert!((idx.score_one(&q, 7).unwrap() - direct).abs() < 1e-6);
    }

    #[test]
    fn query_mismatch_errors() {
        let idx = FlatIndex::new(matrix(2, vec![1., 0.]));
        assert!(matches!(
            idx.search(&query(&[1., 0., 0.]), 1),
            Err(IndexError::DimMismatch { .. })
        ));
        let other = QueryEmbedding::new("other", vec![1., 0.]).unwrap();
        assert!(matches!(
            idx.search(&other, 1),
            Err(IndexError::ModelMismatch { .. })
        ));
        assert!(matches!(idx.search(&query(&[1., 0.]), 0), Err(IndexError::ZeroDepth)));
    }

    #[test]
    fn byte_round_trip_and_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let idx = random_index(&mut rng, 20, 6);
        let bytes = idx.to_bytes().unwrap();
        let back = FlatIndex::from_bytes(&bytes).unwrap();
        assert_eq!(back, idx);
        let q = query(idx.matrix().row(2));
        assert_eq!(back.search(&q, 7).unwrap(), idx.search(&q, 7).unwrap());
        assert!(matches!(
            FlatIndex::from_bytes(&bytes[..bytes.len() - 3]),
            Err(IndexError::Corrupt(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn exact_and_prefix_stable(seed in any::<u64>(), n in 1usize..400, dim in 1usize..24, m in 1usize..60, dups in 0usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut data: Vec<f32> = (0..n * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            // Plant duplicated rows to exercise the key tie-break.
            for _ in 0..dups.min(n.saturating_sub(1)) {
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                let src: Vec<f32> = data[a * dim..(a + 1) * dim].to_vec();
                data[b * dim..(b + 1) * dim].copy_from_slice(&src);
            }
            prop_assume!(data.chunks_exact(dim).all(|r| crate::embedding::norm(r) > 1e-3));
            let idx = FlatIndex::new(matrix(dim, data));
            let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            prop_assume!(crate::embedding::norm(&v) > 1e-3);
            let q = query(&v);
            let small = idx.search(&q, m).unwrap();
            let big = idx.search(&q, m + 10).unwrap();
            prop_assert!(small.is_canonical());
            prop_assert_eq!(small.len(), m.min(n));
            prop_assert_eq!(&big.entries()[..small.len()], small.entries());
            let want = oracle(&idx, &q, m);
            let got: Vec<(usize, f32)> = small.iter().map(|e| (e.frame_key.index(), e.score as f32)).collect();
            prop_assert_eq!(got, want);
        }
    }
}
