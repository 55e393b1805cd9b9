//! Embedding matrices and their on-disk formats.
//!
//! Matrix file (`EMB1`), little-endian:
//!
//! | offset | size | field                              |
//! |--------|------|------------------------------------|
//! | 0      | 4    | magic `EMB1`                       |
//! | 4      | 4    | `u32` dim                          |
//! | 8      | 8    | `u64` row count                    |
//! | 16     | 32   | corpus hash                        |
//! | 48     | 64   | model id, UTF-8, zero padded       |
//! | 112    | ...  | row-major `f32` payload            |
//!
//! Frame embedding file (`FRM1`), the ingest input: magic, `u32` dim, `u64`
//! count, 64-byte model id, then `count` records of `u32` frame index
//! followed by `dim` `f32` values.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::corpus::{CorpusHash, CorpusManifest};

pub const MATRIX_MAGIC: &[u8; 4] = b"EMB1";
pub const FRAME_MAGIC: &[u8; 4] = b"FRM1";
pub const MODEL_ID_LEN: usize = 64;
pub const MATRIX_HEADER_LEN: usize = 4 + 4 + 8 + 32 + MODEL_ID_LEN;

/// Stored rows within this distance of unit norm are kept bit-exact.
pub const NORM_EPS: f64 = 1e-6;
/// Stored rows further than this from unit norm are rejected on load.
pub const LOAD_RENORM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(u64),
    #[error("row count {matrix} does not match manifest frame count {manifest}")]
    CountMismatch { matrix: usize, manifest: usize },
    #[error("corpus hash mismatch: file {file}, manifest {manifest}")]
    HashMismatch { file: String, manifest: String },
    #[error("non-finite value in row {row}")]
    NonFinite { row: usize },
    #[error("unnormalizable row {row}")]
    Unnormalizable { row: usize },
    #[error("row {row} has norm {norm}, too far from unit length")]
    NotNormalized { row: usize, norm: f64 },
    #[error("invalid model id {0:?}")]
    InvalidModelId(String),
    #[error("dimension must be positive")]
    ZeroDim,
    #[error("payload length {len} is not a multiple of dim {dim}")]
    Shape { len: usize, dim: usize },
    #[error("duplicate frame index {0}")]
    DuplicateFrame(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sequential f32 dot product. The fixed accumulation order keeps scores
/// reproducible bit-for-bit.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Dot product of unit vectors clamped to the cosine range.
#[inline]
pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    dot(a, b).clamp(-1.0, 1.0)
}

pub fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// Scales `v` to unit length. Returns `false` for zero or non-finite input.
pub fn normalize_in_place(v: &mut [f32]) -> bool {
    let n = norm(v);
    if !n.is_finite() || n == 0.0 {
        return false;
    }
    for x in v.iter_mut() {
        *x = (*x as f64 / n) as f32;
    }
    true
}

pub fn is_unit(v: &[f32]) -> bool {
    (norm(v) - 1.0).abs() <= NORM_EPS
}

fn check_row(row: &mut [f32], index: usize, tolerance: f64) -> Result<(), EmbeddingError> {
    if row.iter().any(|x| !x.is_finite()) {
        return Err(EmbeddingError::NonFinite { row: index });
    }
    let n = norm(row);
    if n == 0.0 {
        return Err(EmbeddingError::Unnormalizable { row: index });
    }
    let dev = (n - 1.0).abs();
    if dev <= NORM_EPS {
        return Ok(());
    }
    if dev > tolerance {
        return Err(EmbeddingError::NotNormalized { row: index, norm: n });
    }
    normalize_in_place(row);
    Ok(())
}

pub(crate) fn encode_model_id(model_id: &str) -> Result<[u8; MODEL_ID_LEN], EmbeddingError> {
    let bytes = model_id.as_bytes();
    if bytes.is_empty() || bytes.len() > MODEL_ID_LEN || bytes.contains(&0) {
        return Err(EmbeddingError::InvalidModelId(model_id.to_string()));
    }
    let mut out = [0u8; MODEL_ID_LEN];
    out[..bytes.len()].copy_from_slice(bytes);
    Ok(out)
}

pub(crate) fn decode_model_id(raw: &[u8]) -> Result<String, EmbeddingError> {
    let end = raw.iter().position(|&b| b == 0).unwrap_or(raw.len());
    if raw[end..].iter().any(|&b| b != 0) {
        return Err(EmbeddingError::InvalidModelId(
            String::from_utf8_lossy(raw).into_owned(),
        ));
    }
    let id = std::str::from_utf8(&raw[..end])
        .map_err(|_| EmbeddingError::InvalidModelId(String::from_utf8_lossy(raw).into_owned()))?;
    if id.is_empty() {
        return Err(EmbeddingError::InvalidModelId(String::new()));
    }
    Ok(id.to_string())
}

fn check_magic(found: &[u8], expected: &[u8; 4]) -> Result<(), EmbeddingError> {
    if found != expected {
        return Err(EmbeddingError::BadMagic {
            expected: String::from_utf8_lossy(expected).into_owned(),
            found: String::from_utf8_lossy(found).into_owned(),
        });
    }
    Ok(())
}

fn read_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// L2-normalized vectors for one model, row-aligned with a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    model_id: String,
    dim: usize,
    data: Vec<f32>,
    corpus_hash: CorpusHash,
}

impl EmbeddingMatrix {
    /// Builds a matrix from raw row-major values, normalizing every row.
    pub fn from_raw(
        model_id: impl Into<String>,
        dim: usize,
        mut data: Vec<f32>,
        corpus_hash: CorpusHash,
    ) -> Result<Self, EmbeddingError> {
        let model_id = model_id.into();
        encode_model_id(&model_id)?;
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        if data.len() % dim != 0 {
            return Err(EmbeddingError::Shape {
                len: data.len(),
                dim,
            });
        }
        for (i, row) in data.chunks_exact_mut(dim).enumerate() {
            check_row(row, i, f64::INFINITY)?;
        }
        Ok(Self {
            model_id,
            dim,
            data,
            corpus_hash,
        })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn corpus_hash(&self) -> CorpusHash {
        self.corpus_hash
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, i: usize) -> Option<&[f32]> {
        (i < self.rows()).then(|| self.row(i))
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn byte_len(&self) -> usize {
        MATRIX_HEADER_LEN + self.data.len() * 4
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), EmbeddingError> {
        out.write_all(MATRIX_MAGIC)?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&(self.rows() as u64).to_le_bytes())?;
        out.write_all(&self.corpus_hash.0)?;
        out.write_all(&encode_model_id(&self.model_id)?)?;
        let mut payload = Vec::with_capacity(self.data.len() * 4);
        for x in &self.data {
            payload.extend_from_slice(&x.to_le_bytes());
        }
        out.write_all(&payload)?;
        out.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.byte_len());
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Decodes a matrix file without consulting a manifest.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbeddingError> {
        if bytes.len() < MATRIX_HEADER_LEN {
            if bytes.len() >= 4 {
                check_magic(&bytes[..4], MATRIX_MAGIC)?;
            }
            return Err(EmbeddingError::Truncated {
                expected: MATRIX_HEADER_LEN as u64,
                actual: bytes.len() as u64,
            });
        }
        check_magic(&bytes[..4], MATRIX_MAGIC)?;
        let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let corpus_hash = CorpusHash(bytes[16..48].try_into().unwrap());
        let model_id = decode_model_id(&bytes[48..MATRIX_HEADER_LEN])?;
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        let expected = (count as u128) * (dim as u128) * 4 + MATRIX_HEADER_LEN as u128;
        let actual = bytes.len() as u128;
        if actual < expected {
            return Err(EmbeddingError::Truncated {
                expected: expected.min(u64::MAX as u128) as u64,
                actual: actual as u64,
            });
        }
        if actual > expected {
            return Err(EmbeddingError::TrailingBytes((actual - expected) as u64));
        }
        let mut data = read_f32s(&bytes[MATRIX_HEADER_LEN..]);
        for (i, row) in data.chunks_exact_mut(dim).enumerate() {
            check_row(row, i, LOAD_RENORM_TOLERANCE)?;
        }
        Ok(Self {
            model_id,
            dim,
            data,
            corpus_hash,
        })
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self, EmbeddingError> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Checks row count and corpus hash against a manifest.
    pub fn verify_against(&self, manifest: &CorpusManifest) -> Result<(), EmbeddingError> {
        if self.corpus_hash != manifest.corpus_hash() {
            return Err(EmbeddingError::HashMismatch {
                file: self.corpus_hash.to_hex(),
                manifest: manifest.corpus_hash().to_hex(),
            });
        }
        if self.rows() != manifest.len() {
            return Err(EmbeddingError::CountMismatch {
                matrix: self.rows(),
                manifest: manifest.len(),
            });
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbeddingError> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    /// Loads a matrix file and verifies it against the co-loaded manifest.
    pub fn load(path: &Path, manifest: &CorpusManifest) -> Result<Self, EmbeddingError> {
        let m = Self::from_bytes(&std::fs::read(path)?)?;
        m.verify_against(manifest)?;
        Ok(m)
    }
}

/// Per-frame embeddings of one video for one model, keyed by frame index.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEmbeddings {
    model_id: String,
    dim: usize,
    indices: Vec<u32>,
    data: Vec<f32>,
    lookup: HashMap<u32, usize>,
}

impl FrameEmbeddings {
    pub fn new(
        model_id: impl Into<String>,
        dim: usize,
        rows: impl IntoIterator<Item = (u32, Vec<f32>)>,
    ) -> Result<Self, EmbeddingError> {
        let model_id = model_id.into();
        encode_model_id(&model_id)?;
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        let mut out = Self {
            model_id,
            dim,
            indices: Vec::new(),
            data: Vec::new(),
            lookup: HashMap::new(),
        };
        for (index, mut v) in rows {
            if v.len() != dim {
                return Err(EmbeddingError::Shape { len: v.len(), dim });
            }
            let slot = out.indices.len();
            check_row(&mut v, slot, f64::INFINITY)?;
            if out.lookup.insert(index, slot).is_some() {
                return Err(EmbeddingError::DuplicateFrame(index));
            }
            out.indices.push(index);
            out.data.extend_from_slice(&v);
        }
        Ok(out)
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Unit-normalized embedding of a frame, if present.
    pub fn get(&self, frame_index: u32) -> Option<&[f32]> {
        self.lookup
            .get(&frame_index)
            .map(|&slot| &self.data[slot * self.dim..(slot + 1) * self.dim])
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), EmbeddingError> {
        out.write_all(FRAME_MAGIC)?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&(self.indices.len() as u64).to_le_bytes())?;
        out.write_all(&encode_model_id(&self.model_id)?)?;
        let mut buf = Vec::with_capacity(self.indices.len() * (4 + self.dim * 4));
        for (slot, idx) in self.indices.iter().enumerate() {
            buf.extend_from_slice(&idx.to_le_bytes());
            for x in &self.data[slot * self.dim..(slot + 1) * self.dim] {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        out.write_all(&buf)?;
        out.flush()?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbeddingError> {
        const HEADER: usize = 4 + 4 + 8 + MODEL_ID_LEN;
        if bytes.len() < HEADER {
            return Err(EmbeddingError::Truncated {
                expected: HEADER as u64,
                actual: bytes.len() as u64,
            });
        }
        check_magic(&bytes[..4], FRAME_MAGIC)?;
        let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let model_id = decode_model_id(&bytes[16..HEADER])?;
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        let record = 4 + dim * 4;
        let expected = HEADER as u128 + count as u128 * record as u128;
        let actual = bytes.len() as u128;
        if actual < expected {
            return Err(EmbeddingError::Truncated {
                expected: expected.min(u64::MAX as u128) as u64,
                actual: actual as u64,
            });
        }
        if actual > expected {
            return Err(EmbeddingError::TrailingBytes((actual - expected) as u64));
        }
        let rows = bytes[HEADER..].chunks_exact(record).map(|r| {
            (
                u32::from_le_bytes(r[..4].try_into().unwrap()),
                read_f32s(&r[4..]),
            )
        });
        Self::new(model_id, dim, rows)
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbeddingError> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hash(b: u8) -> CorpusHash {
        CorpusHash([b; 32])
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = EmbeddingMatrix::from_raw("clip", 3, vec![3.0, 4.0, 0.0, 0.0, 0.0, 2.0], hash(7)).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(bytes.len(), MATRIX_HEADER_LEN + 24);
        assert_eq!(&bytes[..4], b"EMB1");
        let back = EmbeddingMatrix::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn short_payload_is_truncation() {
        let rows: Vec<f32> = (0..10).flat_map(|i| [i as f32 + 1.0, 1.0]).collect();
        let m = EmbeddingMatrix::from_raw("m", 2, rows, hash(1)).unwrap();
        let bytes = m.to_bytes();
        let cut = &bytes[..bytes.len() - 8];
        assert!(matches!(
            EmbeddingMatrix::from_bytes(cut),
            Err(EmbeddingError::Truncated { .. })
        ));
    }

    #[test]
    fn zero_row_is_unnormalizable() {
        let err = EmbeddingMatrix::from_raw("m", 2, vec![0.0, 0.0, 1.0, 0.0], hash(1)).unwrap_err();
        assert_eq!(err.to_string(), "unnormalizable row 0");

        let m = EmbeddingMatrix::from_raw("m", 2, vec![1.0, 0.0], hash(1)).unwrap();
        let mut bytes = m.to_bytes();
        bytes[MATRIX_HEADER_LEN..].fill(0);
        assert_eq!(
            EmbeddingMatrix::from_bytes(&bytes).unwrap_err().to_string(),
            "unnormalizable row 0"
        );
    }

    #[test]
    fn load_time_renormalization_bounds() {
        let m = EmbeddingMatrix::from_raw("m", 2, vec![1.0, 0.0], hash(1)).unwrap();
        let mut bytes = m.to_bytes();
        bytes[MATRIX_HEADER_LEN..MATRIX_HEADER_LEN + 4].copy_from_slice(&1.0005f32.to_le_bytes());
        let back = EmbeddingMatrix::from_bytes(&bytes).unwrap();
        assert!(is_unit(back.row(0)));

        bytes[MATRIX_HEADER_LEN..MATRIX_HEADER_LEN + 4].copy_from_slice(&1.5f32.to_le_bytes());
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes),
            Err(EmbeddingError::NotNormalized { row: 0, .. })
        ));

        bytes[MATRIX_HEADER_LEN..MATRIX_HEADER_LEN + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes),
            Err(EmbeddingError::NonFinite { row: 0 })
        ));
    }

    #[test]
    fn header_corruption() {
        let m = EmbeddingMatrix::from_raw("m", 2, vec![1.0, 0.0], hash(1)).unwrap();
        let mut bytes = m.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes),
            Err(EmbeddingError::BadMagic { .. })
        ));
        let mut bytes = m.to_bytes();
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes),
            Err(EmbeddingError::TrailingBytes(4))
        ));
    }

    #[test]
    fn frame_embeddings_round_trip() {
        let fe = FrameEmbeddings::new("beit3", 2, vec![(5, vec![1.0, 1.0]), (0, vec![0.0, 2.0])]).unwrap();
        let mut buf = Vec::new();
        fe.write_to(&mut buf).unwrap();
        let back = FrameEmbeddings::from_bytes(&buf).unwrap();
        assert_eq!(back, fe);
        assert!(is_unit(back.get(5).unwrap()));
        assert_eq!(back.get(1), None);
        assert!(matches!(
            FrameEmbeddings::new("m", 1, vec![(1, vec![1.0]), (1, vec![1.0])]),
            Err(EmbeddingError::DuplicateFrame(1))
        ));
    }

    #[test]
    fn model_id_limits() {
        assert!(encode_model_id(&"x".repeat(64)).is_ok());
        assert!(encode_model_id(&"x".repeat(65)).is_err());
        assert!(encode_model_id("").is_err());
    }

    proptest! {
        #[test]
        fn write_load_bit_exact(dim in 1usize..24, raw in prop::collection::vec(-1.0f32..1.0, 1..200)) {
            let rows = raw.len() / dim;
            prop_assume!(rows > 0);
            let data: Vec<f32> = raw[..rows * dim].to_vec();
            prop_assume!(data.chunks_exact(dim).all(|r| norm(r) > 1e-3));
            let m = EmbeddingMatrix::from_raw("p", dim, data, hash(3)).unwrap();
            let back = EmbeddingMatrix::from_bytes(&m.to_bytes()).unwrap();
            prop_assert_eq!(back.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                            m.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        }
    }
}
