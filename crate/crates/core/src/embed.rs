//! Text embeddings σ(·) and cosine similarity.
//!
//! Two backends sit behind [`Embedder`]: a deterministic signed feature-hashing
//! embedder over unigrams and bigrams, and a remote HTTP endpoint.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::tokenize;

/// Separator placed between a source and a target when they are embedded
/// together.
pub const PAIR_SEPARATOR: &str = "\n\n";

pub fn concat_pair(x: &str, y: &str) -> String {
    let mut s = String::with_capacity(x.len() + PAIR_SEPARATOR.len() + y.len());
    s.push_str(x);
    s.push_str(PAIR_SEPARATOR);
    s.push_str(y);
    s
}

/// A unit-norm embedding, or the zero vector for texts without tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    values: Vec<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    empty: bool,
}

impl Embedding {
    /// L2-normalizes `values`. An all-zero input yields the flagged zero
    /// vector.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            values.iter_mut().for_each(|v| *v = 0.0);
            return Self { values, empty: true };
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Self { values, empty: false }
    }

    pub fn zero(dim: usize) -> Self {
        Self { values: vec![0.0; dim], empty: true }
    }

    /// Wraps values that are already normalized (deserialized state, tests).
    pub fn from_raw(values: Vec<f64>) -> Self {
        let empty = values.iter().all(|&v| v == 0.0);
        Self { values, empty }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// True when the text had no tokens.
    pub fn is_empty(&self) -> bool {
        self.empty
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine_sim(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot(&a.values, &b.values) / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum EmbedderConfig {
    Hash {
        dimension: usize,
        seed: u64,
    },
    Http {
        endpoint: String,
        dimension: usize,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
        #[serde(default = "default_retries")]
        retries: u32,
    },
}

fn default_timeout_secs() -> u64 {
    30
}

fn default_retries() -> u32 {
    2
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Hash { dimension: 256, seed: 0 }
    }
}

impl EmbedderConfig {
    pub fn dimension(&self) -> usize {
        match self {
            EmbedderConfig::Hash { dimension, .. } | EmbedderConfig::Http { dimension, .. } => *dimension,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Embedder {
    Hash(HashEmbedder),
    Http(HttpEmbedder),
}

impl Embedder {
    pub fn new(cfg: &EmbedderConfig) -> Result<Self> {
        if cfg.dimension() < 8 {
            return Err(Error::InvalidConfig(format!(
                "embedding dimension must be at least 8, got {}",
                cfg.dimension()
            )));
        }
        Ok(match cfg {
            EmbedderConfig::Hash { dimension, seed } => Embedder::Hash(HashEmbedder::new(*dimension, *seed)),
            EmbedderConfig::Http { endpoint, dimension, timeout_secs, retries } => Embedder::Http(
                HttpEmbedder::new(endpoint.clone(), *dimension, Duration::from_secs(*timeout_secs), *retries)?,
            ),
        })
    }

    pub fn hash(dimension: usize, seed: u64) -> Self {
        Embedder::Hash(HashEmbedder::new(dimension, seed))
    }

    pub fn dimension(&self) -> usize {
        match self {
            Embedder::Hash(h) => h.dimension,
            Embedder::Http(h) => h.dimension,
        }
    }

    pub fn embed_text(&self, text: &str) -> Result<Embedding> {
        match self {
            Embedder::Hash(h) => Ok(h.embed(text)),
            Embedder::Http(h) => h.embed(text),
        }
    }

    pub fn embed_pair(&self, x: &str, y: &str) -> Result<Embedding> {
        self.embed_text(&concat_pair(x, y))
    }
}

/// Signed feature hashing of lowercase unigrams and bigrams into
/// `dimension` buckets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashEmbedder {
    dimension: usize,
    seed: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn seeded_hash(seed: u64, parts: &[&str]) -> u64 {
    let mut h = FNV_OFFSET ^ splitmix64(seed);
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            // unit separator keeps ("ab","c") and ("a","bc") apart
            h ^= 0x1f;
            h = h.wrapping_mul(FNV_PRIME);
        }
        for &b in part.as_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    splitmix64(h)
}

impl HashEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        Self { dimension, seed }
    }

    fn add_feature(&self, acc: &mut [f64], parts: &[&str]) {
        let h = seeded_hash(self.seed, parts);
        let bucket = (h % self.dimension as u64) as usize;
        let sign = if splitmix64(h) >> 63 == 0 { 1.0 } else { -1.0 };
        acc[bucket] += sign;
    }

    pub fn embed(&self, text: &str) -> Embedding {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Embedding::zero(self.dimension);
        }
        let mut acc = vec![0.0; self.dimension];
        for t in &tokens {
            self.add_feature(&mut acc, &[t]);
        }
        for w in tokens.windows(2) {
            self.add_feature(&mut acc, &[&w[0], &w[1]]);
        }
        Embedding::normalized(acc)
    }
}

/// Remote embedder: `POST {"input": text}` → `{"embedding": [...]}`.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    endpoint: String,
    dimension: usize,
    retries: u32,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    embedding: Vec<f64>,
}

impl HttpEmbedder {
    pub fn new(endpoint: String, dimension: usize, timeout: Duration, retries: u32) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(Self { endpoint, dimension, retries, client })
    }

    pub fn embed(&self, text: &str) -> Result<Embedding> {
        if tokenize(text).is_empty() {
            return Ok(Embedding::zero(self.dimension));
        }
        let mut attempt = 0;
        loop {
            match self.try_embed(text) {
                Ok(e) => return Ok(e),
                Err(e) if attempt < self.retries && is_retryable(&e) => attempt += 1,
                Err(e) => return Err(e),
            }
        }
    }

    fn try_embed(&self, text: &str) -> Result<Embedding> {
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&serde_json::json!({ "input": text }))
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    Error::Timeout(e.to_string())
                } else {
                    Error::HttpBackendError { status: 0, body: e.to_string() }
                }
            })?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(Error::HttpBackendError { status: status.as_u16(), body: excerpt(&body) });
        }
        let parsed: EmbeddingResponse = resp
            .json()
            .map_err(|e| Error::HttpBackendError { status: status.as_u16(), body: e.to_string() })?;
        if parsed.embedding.len() != self.dimension {
            return Err(Error::DimensionMismatch { expected: self.dimension, got: parsed.embedding.len() });
        }
        Ok(Embedding::normalized(parsed.embedding))
    }
}

fn is_retryable(e: &Error) -> bool {
    match e {
        Error::Timeout(_) => true,
        Error::HttpBackendError { status, .. } => *status == 0 || *status == 429 || *status >= 500,
        _ => false,
    }
}

pub(crate) fn excerpt(body: &str) -> String {
    body.chars().take(200).collect()
}
