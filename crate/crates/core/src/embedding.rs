//! Embedding providers and cosine scoring.
//!
//! A provider turns a batch of texts into fixed-dimension vectors. Three are
//! bundled: [`HashedBagProvider`] (raw hashed token counts),
//! [`crate::encoder::LinearEncoder`] (a trained projection of those counts),
//! and [`RandomProvider`] (text-seeded noise, for ablation runs). The HTTP
//! client lives in [`crate::remote`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        EmbeddingVector(self.0.iter().map(|x| x * factor).collect())
    }
}

impl From<Vec<f64>> for EmbeddingVector {
    fn from(v: Vec<f64>) -> Self {
        EmbeddingVector(v)
    }
}

/// Maps texts to vectors of one fixed dimension.
///
/// Equal texts must map to equal vectors for the lifetime of the provider and
/// the output has one vector per input, in order. Implementations are shared
/// across worker threads.
pub trait EmbeddingProvider: Send + Sync {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>>;

    /// `None` until a remote provider has seen its first response.
    fn dimension(&self) -> Option<usize>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let mut out = self.embed_batch(&[text])?;
        match out.pop() {
            Some(v) if out.is_empty() => Ok(v),
            _ => Err(Error::provider_fatal("provider returned wrong number of vectors")),
        }
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for &P {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        (**self).embed_batch(texts)
    }

    fn dimension(&self) -> Option<usize> {
        (**self).dimension()
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        (**self).embed_batch(texts)
    }

    fn dimension(&self) -> Option<usize> {
        (**self).dimension()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity clamped to `[-1, 1]`; zero when either vector has zero norm.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let denom = norm(u) * norm(v);
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((dot(u, v) / denom).clamp(-1.0, 1.0))
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over the UTF-8 bytes of `s`.
pub fn fnv1a64(s: &str) -> u64 {
    s.bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|tok| !tok.is_empty())
        .map(str::to_lowercase)
}

pub fn validate_hash_dim(hash_dim: usize) -> Result<()> {
    if hash_dim >= 2 && hash_dim.is_power_of_two() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "hash dimension must be a power of two >= 2, got {hash_dim}"
        )))
    }
}

/// Sparse token-count vector: `(bucket, count)` pairs sorted by bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct HashedFeatures {
    pub dim: usize,
    pub entries: Vec<(usize, f64)>,
}

impl HashedFeatures {
    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.dim];
        for &(i, c) in &self.entries {
            dense[i] = c;
        }
        dense
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Bag-of-tokens counts with each token hashed by FNV-1a into `hash_dim` buckets.
///
/// Panics if `hash_dim` is not a power of two >= 2; see [`validate_hash_dim`].
pub fn hashed_features(text: &str, hash_dim: usize) -> HashedFeatures {
    assert!(
        validate_hash_dim(hash_dim).is_ok(),
        "invalid hash dimension {hash_dim}"
    );
    let mask = (hash_dim - 1) as u64;
    let mut buckets: Vec<usize> = tokenize(text)
        .map(|tok| (fnv1a64(&tok) & mask) as usize)
        .collect();
    buckets.sort_unstable();
    let mut entries: Vec<(usize, f64)> = Vec::new();
    for b in buckets {
        match entries.last_mut() {
            Some((last, count)) if *last == b => *count += 1.0,
            _ => entries.push((b, 1.0)),
        }
    }
    HashedFeatures {
        dim: hash_dim,
        entries,
    }
}

pub const DEFAULT_HASH_DIM: usize = 1024;

/// Embeds a text as its dense hashed token counts.
#[derive(Debug, Clone)]
pub struct HashedBagProvider {
    hash_dim: usize,
}

impl HashedBagProvider {
    pub fn new(hash_dim: usize) -> Result<Self> {
        validate_hash_dim(hash_dim)?;
        Ok(HashedBagProvider { hash_dim })
    }
}

impl Default for HashedBagProvider {
    fn default() -> Self {
        HashedBagProvider {
            hash_dim: DEFAULT_HASH_DIM,
        }
    }
}

impl EmbeddingProvider for HashedBagProvider {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        Ok(texts
            .iter()
            .map(|t| EmbeddingVector(hashed_features(t, self.hash_dim).to_dense()))
            .collect())
    }

    fn dimension(&self) -> Option<usize> {
        Some(self.hash_dim)
    }
}

/// Uniform noise in `[-1, 1]^dim`, seeded by the text hash and a run seed.
///
/// Scores from this provider carry no information about the question, which
/// reproduces the "no encoder ranking" ablation.
#[derive(Debug, Clone)]
pub struct RandomProvider {
    seed: u64,
    dim: usize,
}

impl RandomProvider {
    pub fn new(seed: u64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("random provider dimension must be > 0".into()));
        }
        Ok(RandomProvider { seed, dim })
    }
}

impl EmbeddingProvider for RandomProvider {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        Ok(texts
            .iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(t) ^ self.seed);
                EmbeddingVector((0..self.dim).map(|_| rng.gen_range(-1.0..=1.0)).collect())
            })
            .collect())
    }

    fn dimension(&self) -> Option<usize> {
        Some(self.dim)
    }
}
