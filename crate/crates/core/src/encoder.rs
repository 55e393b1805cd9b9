//! Text encoders that turn a query string into a unit query vector.
//!
//! Two backends exist: a deterministic stub and an HTTP bridge. The HTTP
//! contract is a `POST` of `{"model_id": ..., "text": ...}` answered by
//! `{"vector": [f32; dim]}`; the returned vector is normalized client-side.
//!
//! The stub derives a ChaCha8 seed from `SHA-256(model_id || 0x00 || text)`,
//! draws `dim` standard normal samples and normalizes them. It is a pure
//! function of `(model_id, text)` and needs no model weights.

use std::sync::OnceLock;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embedding::{is_unit, normalize_in_place};

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("query text is empty")]
    EmptyText,
    #[error("encoder for model {model_id} unreachable: {message}")]
    Transport { model_id: String, message: String },
    #[error("encoder for model {model_id} violated its contract: {message}")]
    Contract { model_id: String, message: String },
    #[error("invalid encoder config for model {model_id}: {message}")]
    Config { model_id: String, message: String },
}

impl EncodeError {
    pub fn model_id(&self) -> Option<&str> {
        match self {
            EncodeError::EmptyText => None,
            EncodeError::Transport { model_id, .. }
            | EncodeError::Contract { model_id, .. }
            | EncodeError::Config { model_id, .. } => Some(model_id),
        }
    }
}

/// A unit-norm text embedding for a specific model.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryEmbedding {
    model_id: String,
    vector: Vec<f32>,
}

impl QueryEmbedding {
    /// Normalizes `vector`; `None` if it has no direction.
    pub fn new(model_id: impl Into<String>, mut vector: Vec<f32>) -> Option<Self> {
        if vector.is_empty() || !normalize_in_place(&mut vector) {
            return None;
        }
        Some(Self {
            model_id: model_id.into(),
            vector,
        })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn vector(&self) -> &[f32] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn is_unit(&self) -> bool {
        is_unit(&self.vector)
    }
}

pub trait TextEncoder: Send + Sync {
    fn model_id(&self) -> &str;
    fn dim(&self) -> usize;
    fn encode(&self, text: &str) -> Result<QueryEmbedding, EncodeError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Stub,
    Url(String),
}

impl Endpoint {
    pub fn parse(s: &str) -> Self {
        if s == "stub" {
            Endpoint::Stub
        } else {
            Endpoint::Url(s.to_string())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderEndpointConfig {
    pub model_id: String,
    pub endpoint: Endpoint,
    pub timeout: Duration,
    pub dim: usize,
}

impl EncoderEndpointConfig {
    pub fn stub(model_id: impl Into<String>, dim: usize) -> Self {
        Self {
            model_id: model_id.into(),
            endpoint: Endpoint::Stub,
            timeout: Duration::from_secs(5),
            dim,
        }
    }

    pub fn build(&self) -> Result<Box<dyn TextEncoder>, EncodeError> {
        if self.dim == 0 {
            return Err(EncodeError::Config {
                model_id: self.model_id.clone(),
                message: "dim must be positive".into(),
            });
        }
        Ok(match &self.endpoint {
            Endpoint::Stub => Box::new(StubEncoder::new(&self.model_id, self.dim)),
            Endpoint::Url(url) => Box::new(HttpEncoder::new(
                &self.model_id,
                url,
                self.dim,
                self.timeout,
            )?),
        })
    }
}

/// Convenience wrapper for one-off encoding.
pub fn encode_text(config: &EncoderEndpointConfig, text: &str) -> Result<QueryEmbedding, EncodeError> {
    config.build()?.encode(text)
}

#[derive(Debug, Clone)]
pub struct StubEncoder {
    model_id: String,
    dim: usize,
}

impl StubEncoder {
    pub fn new(model_id: impl Into<String>, dim: usize) -> Self {
        Self {
            model_id: model_id.into(),
            dim,
        }
    }

    pub fn seed(model_id: &str, text: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(model_id.as_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        h.finalize().into()
    }
}

impl TextEncoder for StubEncoder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<QueryEmbedding, EncodeError> {
        if text.trim().is_empty() {
            return Err(EncodeError::EmptyText);
        }
        let mut rng = ChaCha8Rng::from_seed(Self::seed(&self.model_id, text));
        // all-zero draws are redrawn
        loop {
            let v: Vec<f32> = (0..self.dim)
                .map(|_| {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    x as f32
                })
                .collect();
            if let Some(q) = QueryEmbedding::new(&self.model_id, v) {
                return Ok(q);
            }
        }
    }
}

#[derive(Serialize)]
struct EncodeRequest<'a> {
    model_id: &'a str,
    text: &'a str,
}

#[derive(Deserialize)]
struct EncodeResponse {
    vector: Vec<f32>,
}

/// The blocking client is built on first use and dropped on a plain thread,
/// so the encoder can be created and dropped inside an async runtime.
pub struct HttpEncoder {
    model_id: String,
    url: String,
    dim: usize,
    timeout: Duration,
    client: OnceLock<reqwest::blocking::Client>,
}

impl HttpEncoder {
    pub fn new(model_id: &str, url: &str, dim: usize, timeout: Duration) -> Result<Self, EncodeError> {
        reqwest::Url::parse(url).map_err(|e| EncodeError::Config {
            model_id: model_id.to_string(),
            message: format!("invalid endpoint {url:?}: {e}"),
        })?;
        Ok(Self {
            model_id: model_id.to_string(),
            url: url.to_string(),
            dim,
            timeout,
            client: OnceLock::new(),
        })
    }

    fn client(&self) -> Result<&reqwest::blocking::Client, EncodeError> {
        if let Some(c) = self.client.get() {
            return Ok(c);
        }
        let c = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| EncodeError::Config {
                model_id: self.model_id.clone(),
                message: e.to_string(),
            })?;
        Ok(self.client.get_or_init(|| c))
    }
}

impl Drop for HttpEncoder {
    fn drop(&mut self) {
        if let Some(c) = self.client.take() {
            let _ = std::thread::spawn(move || drop(c)).join();
        }
    }
}

impl TextEncoder for HttpEncoder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<QueryEmbedding, EncodeError> {
        if text.trim().is_empty() {
            return Err(EncodeError::EmptyText);
        }
        let transport = |message: String| EncodeError::Transport {
            model_id: self.model_id.clone(),
            message,
        };
        let contract = |message: String| EncodeError::Contract {
            model_id: self.model_id.clone(),
            message,
        };
        let resp = self
            .client()?
            .post(&self.url)
            .json(&EncodeRequest {
                model_id: &self.model_id,
                text,
            })
            .send()
            .map_err(|e| transport(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(transport(format!("HTTP {}", resp.status())));
        }
        let body: EncodeResponse = resp.json().map_err(|e| contract(e.to_string()))?;
        if body.vector.len() != self.dim {
            return Err(contract(format!(
                "expected dim {}, got {}",
                self.dim,
                body.vector.len()
            )));
        }
        if body.vector.iter().any(|x| !x.is_finite()) {
            return Err(contract("non-finite vector component".into()));
        }
        QueryEmbedding::new(&self.model_id, body.vector)
            .ok_or_else(|| contract("zero vector".into()))
    }
}
