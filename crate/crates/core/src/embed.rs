//! Text embeddings: normalized vectors, batching over a provider, and the
//! offline hashed character-trigram embedder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, ProviderError, Result};
use crate::provider::EmbeddingProvider;

pub const FALLBACK_DIM: usize = 256;
pub const FALLBACK_SEED: u64 = 0x6d75_616c_6c6d_0001;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(pub Vec<f64>);

impl Vector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Unit-length copy; `None` for the zero vector.
    pub fn normalized(&self) -> Option<Vector> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return None;
        }
        Some(Vector(self.0.iter().map(|v| v / n).collect()))
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

pub fn cosine(a: &Vector, b: &Vector) -> Result<f64> {
    let dot = a.dot(b)?;
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / denom).clamp(-1.0, 1.0))
}

/// Embeds `texts` in provider batches of `batch_size`, checks dimensions and
/// returns unit vectors in input order.
pub fn embed_batch(texts: &[String], provider: &dyn EmbeddingProvider, batch_size: usize) -> Result<Vec<Vector>> {
    if texts.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(Error::InvalidField {
            field: format!("texts[{i}]"),
            reason: "empty text".into(),
        });
    }
    let dim = provider.dim();
    let mut out = Vec::with_capacity(texts.len());
    for batch in texts.chunks(batch_size.max(1)) {
        let raw = provider.embed(batch)?;
        if raw.len() != batch.len() {
            return Err(ProviderError::new(
                provider.name(),
                format!("{} vectors for {} texts", raw.len(), batch.len()),
            )
            .into());
        }
        for v in raw {
            if v.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            let unit = Vector(v)
                .normalized()
                .ok_or_else(|| ProviderError::new(provider.name(), "zero-norm vector"))?;
            out.push(unit);
        }
    }
    Ok(out)
}

/// Offline embedder. The text is lowercased and padded with one space on
/// each side; every character trigram is hashed with seeded FNV-1a (seed
/// bytes little-endian, then the trigram's UTF-8 bytes). The hash picks the
/// bucket (`h % dim`) and its top bit picks the sign of a unit increment.
/// Texts shorter than three characters after padding hash as a single gram.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(FALLBACK_DIM, FALLBACK_SEED)
    }
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, seed }
    }

    fn hash(&self, gram: &str) -> u64 {
        let mut h = FNV_OFFSET;
        for b in self.seed.to_le_bytes().iter().chain(gram.as_bytes()) {
            h ^= u64::from(*b);
            h = h.wrapping_mul(FNV_PRIME);
        }
        h
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let padded: Vec<char> = format!(" {} ", text.to_lowercase()).chars().collect();
        let mut v = vec![0.0; self.dim];
        let grams: Vec<String> = if padded.len() < 3 {
            vec![padded.iter().collect()]
        } else {
            padded.windows(3).map(|w| w.iter().collect()).collect()
        };
        for g in grams {
            let h = self.hash(&g);
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        v
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn name(&self) -> &str {
        "hash-trigram"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> std::result::Result<Vec<Vec<f64>>, ProviderError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}
