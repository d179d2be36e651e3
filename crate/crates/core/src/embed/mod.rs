//! Subword skip-gram embeddings trained on normalized transaction text.
//!
//! A word's input representation is the mean of its own row and the rows of
//! its hashed character n-grams (the word is wrapped in `<` `>` first).
//! After training, in-vocabulary words store that composed vector; unknown
//! words are composed from whichever of their n-grams were seen in training.

mod model;
mod serialize;
mod train;

pub use model::{cosine, EmbeddingModel};
pub use train::{train_embedding, train_embedding_with_stats, TrainStats};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub min_n: usize,
    pub max_n: usize,
    /// Maximum context radius; each position samples a radius in `1..=window`.
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Initial step size, decayed linearly to zero over training.
    pub learning_rate: f64,
    pub min_count: usize,
    pub bucket_count: u32,
    pub seed: u64,
    /// Number of lock-free training threads. 1 is deterministic.
    pub workers: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            min_n: 3,
            max_n: 6,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.05,
            min_count: 5,
            bucket_count: 2_000_000,
            seed: 1,
            workers: 1,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("embedding: {m}")));
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        if self.min_n == 0 || self.min_n > self.max_n {
            return bad("need 1 <= min_n <= max_n");
        }
        if self.negatives == 0 {
            return bad("negatives must be >= 1");
        }
        if self.window == 0 || self.epochs == 0 || self.workers == 0 {
            return bad("window, epochs and workers must be >= 1");
        }
        if self.bucket_count == 0 {
            return bad("bucket_count must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

/// 32-bit FNV-1a.
pub(crate) fn fnv1a(bytes: &[u8]) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for &b in bytes {
        h ^= b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

/// Hash buckets of every character n-gram of `<word>` with length in
/// `min_n..=max_n`. Lengths count characters, not bytes.
pub(crate) fn ngram_buckets(word: &str, min_n: usize, max_n: usize, bucket_count: u32) -> Vec<u32> {
    let wrapped: Vec<char> = std::iter::once('<').chain(word.chars()).chain(std::iter::once('>')).collect();
    let mut out = Vec::new();
    let mut buf = String::new();
    for n in min_n..=max_n {
        if n > wrapped.len() {
            break;
        }
        for start in 0..=wrapped.len() - n {
            buf.clear();
            buf.extend(&wrapped[start..start + n]);
            out.push(fnv1a(buf.as_bytes()) % bucket_count);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a test vectors.
        assert_eq!(fnv1a(b""), 0x811c9dc5);
        assert_eq!(fnv1a(b"a"), 0xe40c292c);
        assert_eq!(fnv1a(b"foobar"), 0xbf9cf968);
    }

    #[test]
    fn ngram_enumeration() {
        // "<ab>" has 2 trigrams and 1 four-gram.
        assert_eq!(ngram_buckets("ab", 3, 6, u32::MAX).len(), 3);
        let expected: Vec<u32> = ["<ab", "ab>", "<ab>"].iter().map(|g| fnv1a(g.as_bytes())).collect();
        assert_eq!(ngram_buckets("ab", 3, 6, u32::MAX), expected);
        assert!(ngram_buckets("a", 4, 6, 10).is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(EmbeddingConfig::default().validate().is_ok());
        let c = EmbeddingConfig { min_n: 4, max_n: 3, ..Default::default() };
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
        let c = EmbeddingConfig { negatives: 0, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
