//! Deterministic feature-hashed text embeddings.
//!
//! Features are word unigrams plus character trigrams of each token padded
//! as `^token$`. Every feature is hashed with 64-bit FNV-1a; the hash modulo
//! `dims` picks the bucket and the top bit picks the sign. The folded counts
//! are L2-normalized. Not a neural model: it only has to rank lexically
//! related strings above unrelated ones, and it must be bit-reproducible.

use serde::{Deserialize, Serialize};

use super::tokenize::tokenize;

pub const DEFAULT_DIMS: usize = 256;
pub const MIN_DIMS: usize = 8;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h = FNV_OFFSET;
    for part in parts {
        for &b in *part {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    /// Set for the all-zero vector of a text with no tokens.
    pub empty: bool,
}

impl EmbeddingVector {
    pub fn dims(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Cosine similarity. Both sides are unit vectors unless empty, in which
    /// case the similarity is 0.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        if self.empty || other.empty {
            return 0.0;
        }
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        dot.clamp(-1.0, 1.0)
    }
}

fn features(text: &str) -> Vec<(Vec<u8>, &'static [u8])> {
    let mut out = Vec::new();
    for tok in tokenize(text) {
        let chars: Vec<char> = std::iter::once('^')
            .chain(tok.chars())
            .chain(std::iter::once('$'))
            .collect();
        for w in chars.windows(3) {
            out.push((w.iter().collect::<String>().into_bytes(), b"c:" as &[u8]));
        }
        out.push((tok.into_bytes(), b"w:" as &[u8]));
    }
    out
}

/// Embed `text` into `dims` buckets. Panics if `dims < MIN_DIMS`.
pub fn embed_text(text: &str, dims: usize) -> EmbeddingVector {
    assert!(dims >= MIN_DIMS, "embedding dims must be >= {MIN_DIMS}");
    let feats = features(text);
    let mut values = vec![0.0f64; dims];
    if feats.is_empty() {
        return EmbeddingVector { values, empty: true };
    }
    for (body, prefix) in &feats {
        let h = fnv1a(&[prefix, body]);
        let bucket = (h % dims as u64) as usize;
        values[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
    }
    let mut norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        // every signed count cancelled out; fall back to unsigned counts
        for (body, prefix) in &feats {
            let h = fnv1a(&[prefix, body]);
            values[(h % dims as u64) as usize] += 1.0;
        }
        norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    for v in &mut values {
        *v /= norm;
    }
    EmbeddingVector { values, empty: false }
}

pub fn embed(text: &str) -> EmbeddingVector {
    embed_text(text, DEFAULT_DIMS)
}
