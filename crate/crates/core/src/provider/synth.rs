//! Deterministic hash embedding used for tests and offline runs.

use super::{Embedder, ProviderError};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const MANTISSA: u64 = 1 << 53;

fn fnv1a(state: u64, bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(state, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Contribution of one token to coordinate `j`, in [-1, 1).
pub fn token_coordinate(token: &str, j: u64, seed: u64) -> f64 {
    let h = fnv1a(FNV_OFFSET, token.as_bytes());
    let h = fnv1a(h, &j.to_le_bytes());
    let h = fnv1a(h, &seed.to_le_bytes());
    (h % MANTISSA) as f64 / MANTISSA as f64 * 2.0 - 1.0
}

/// Un-normalized sum of token contributions.
pub fn raw_embedding(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for token in text.split_whitespace() {
        for (j, x) in v.iter_mut().enumerate() {
            *x += token_coordinate(token, j as u64, seed);
        }
    }
    v
}

/// Whitespace-tokenized, FNV-1a hashed, L2-normalized embedding.
/// Texts without tokens (or whose contributions cancel) map to `e_0`.
pub fn synth_embedding(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut v = raw_embedding(text, dim, seed);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
        v[0] = 1.0;
    } else {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

#[derive(Debug, Clone)]
pub struct SynthEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Embedder for SynthEmbedder {
    fn id(&self) -> String {
        format!("synth:d={}:seed={}", self.dim, self.seed)
    }

    fn dimension(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        super::check_texts(texts)?;
        Ok(texts
            .iter()
            .map(|t| synth_embedding(t, self.dim, self.seed))
            .collect())
    }
}
