//! Video moment retrieval over deduplicated keyframe embeddings.
//!
//! The pipeline: [`ingest`] turns scene boundaries and per-frame embeddings
//! into a [`corpus::CorpusManifest`] plus one [`embedding::EmbeddingMatrix`]
//! per model; [`index::FlatIndex`] answers exact cosine top-M queries;
//! [`ensemble`] fuses several models, [`rerank`] rescores candidates by
//! their temporal neighborhood, and [`temporal`] localizes a start/end pair
//! around an anchor frame from two queries. [`pipeline`] wires them into the
//! request/response surface shared by the CLI and the HTTP service.

pub mod config;
pub mod corpus;
pub mod embedding;
pub mod encoder;
pub mod ensemble;
pub mod index;
pub mod ingest;
pub mod pipeline;
pub mod rerank;
pub mod temporal;

pub use corpus::{CorpusHash, CorpusManifest, FrameKey, FrameRecord, RankedEntry, RankedList};
pub use embedding::EmbeddingMatrix;
pub use encoder::{QueryEmbedding, StubEncoder, TextEncoder};
pub use index::FlatIndex;
