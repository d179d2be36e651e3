use std::collections::{BTreeMap, HashMap};

use crate::txprep::NormalizedText;

use super::{ngram_buckets, EmbeddingConfig};

/// Trained embedding tables.
///
/// `word_vectors` holds the composed vector of each vocabulary word, row-major
/// in vocabulary order. Only n-gram buckets reached by some vocabulary word
/// are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub(crate) config: EmbeddingConfig,
    pub(crate) words: Vec<String>,
    pub(crate) counts: Vec<u64>,
    pub(crate) word_index: HashMap<String, usize>,
    pub(crate) word_vectors: Vec<f32>,
    pub(crate) ngram_rows: BTreeMap<u32, usize>,
    pub(crate) ngram_vectors: Vec<f32>,
}

/// Cosine similarity; 0 when either vector has zero norm. Clamped to
/// `[-1, 1]` against rounding.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

impl EmbeddingModel {
    pub(crate) fn from_parts(
        config: EmbeddingConfig,
        words: Vec<String>,
        counts: Vec<u64>,
        word_vectors: Vec<f32>,
        ngram_rows: BTreeMap<u32, usize>,
        ngram_vectors: Vec<f32>,
    ) -> Self {
        let word_index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        // Canonical layout: n-gram rows stored in ascending bucket order.
        let d = config.dim;
        let mut sorted_vectors = Vec::with_capacity(ngram_vectors.len());
        for &row in ngram_rows.values() {
            sorted_vectors.extend_from_slice(&ngram_vectors[row * d..(row + 1) * d]);
        }
        let ngram_rows = ngram_rows.into_keys().enumerate().map(|(i, b)| (b, i)).collect();
        let ngram_vectors = sorted_vectors;
        Self {
            config,
            words,
            counts,
            word_index,
            word_vectors,
            ngram_rows,
            ngram_vectors,
        }
    }

    pub fn config(&self) -> &EmbeddingConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    /// Vocabulary in training order (descending count, then lexicographic).
    pub fn vocabulary(&self) -> &[String] {
        &self.words
    }

    pub fn count(&self, word: &str) -> Option<u64> {
        self.word_index.get(word).map(|&i| self.counts[i])
    }

    pub fn contains(&self, word: &str) -> bool {
        self.word_index.contains_key(word)
    }

    pub fn num_ngrams(&self) -> usize {
        self.ngram_rows.len()
    }

    pub(crate) fn word_row(&self, i: usize) -> &[f32] {
        let d = self.config.dim;
        &self.word_vectors[i * d..(i + 1) * d]
    }

    /// Stored vector for a hashed n-gram bucket, if that bucket was trained.
    pub fn ngram_vector(&self, bucket: u32) -> Option<&[f32]> {
        let d = self.config.dim;
        self.ngram_rows.get(&bucket).map(|&r| &self.ngram_vectors[r * d..(r + 1) * d])
    }

    /// Buckets of `word`'s n-grams under this model's hashing parameters.
    pub fn buckets(&self, word: &str) -> Vec<u32> {
        ngram_buckets(word, self.config.min_n, self.config.max_n, self.config.bucket_count)
    }

    /// Vocabulary words get their stored vector; unknown words the mean of
    /// their known n-gram vectors, or zeros when none is known.
    pub fn vector(&self, word: &str) -> Vec<f32> {
        if let Some(&i) = self.word_index.get(word) {
            return self.word_row(i).to_vec();
        }
        let d = self.config.dim;
        let mut acc = vec![0.0f64; d];
        let mut n = 0usize;
        for b in self.buckets(word) {
            if let Some(v) = self.ngram_vector(b) {
                for (a, &x) in acc.iter_mut().zip(v) {
                    *a += x as f64;
                }
                n += 1;
            }
        }
        if n == 0 {
            return vec![0.0; d];
        }
        acc.into_iter().map(|a| (a / n as f64) as f32).collect()
    }

    /// Top `k` vocabulary words by cosine to `word`, excluding `word` itself.
    /// Ties are broken lexicographically.
    pub fn nearest_neighbors(&self, word: &str, k: usize) -> Vec<(String, f64)> {
        let q = self.vector(word);
        self.rank_against(&q, |w| w != word, k)
    }

    /// Every vocabulary word whose cosine to `vector` passes `keep`, sorted
    /// by descending cosine then word, truncated to `limit`.
    pub(crate) fn rank_against(&self, vector: &[f32], include: impl Fn(&str) -> bool, limit: usize) -> Vec<(String, f64)> {
        let mut scored: Vec<(String, f64)> = self
            .words
            .iter()
            .enumerate()
            .filter(|(_, w)| include(w))
            .map(|(i, w)| (w.clone(), cosine(vector, self.word_row(i))))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(limit);
        scored
    }

    /// All vocabulary words with cosine to `vector` at least `threshold`.
    pub fn words_above(&self, vector: &[f32], threshold: f64) -> Vec<(String, f64)> {
        let mut out = self.rank_against(vector, |_| true, usize::MAX);
        out.retain(|(_, c)| *c >= threshold);
        out
    }

    /// Maximum cosine between any token of `sentence` and `anchor`; -1 for an
    /// empty sentence.
    pub fn max_word_similarity(&self, sentence: &NormalizedText, anchor: &[f32]) -> f64 {
        sentence
            .tokens()
            .iter()
            .map(|t| cosine(&self.vector(t), anchor))
            .fold(-1.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> EmbeddingModel {
        let config = EmbeddingConfig {
            dim: 2,
            min_n: 3,
            max_n: 3,
            bucket_count: 1_000_003,
            ..Default::default()
        };
        let words = vec!["aa".to_string(), "bb".to_string(), "cc".to_string(), "dd".to_string()];
        let vecs = vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, -1.0, 0.0];
        let mut rows = BTreeMap::new();
        let mut ng = Vec::new();
        for (i, g) in ngram_buckets("xy", 3, 3, 1_000_003).into_iter().enumerate() {
            rows.insert(g, i);
            ng.extend([i as f32 + 1.0, 2.0]);
        }
        EmbeddingModel::from_parts(config, words, vec![4, 3, 2, 1], vecs, rows, ng)
    }

    #[test]
    fn cosine_edge_cases() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert_eq!(cosine(&[2.0, 0.0], &[1.0, 0.0]), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[-3.0, 0.0]), -1.0);
    }

    #[test]
    fn vector_lookup_and_oov() {
        let m = toy();
        assert_eq!(m.vector("cc"), vec![0.0, 1.0]);
        // "<xy" -> (1,2), "xy>" -> (2,2): mean (1.5, 2)
        assert_eq!(m.vector("xy"), vec![1.5, 2.0]);
        assert_eq!(m.vector("zzzz"), vec![0.0, 0.0]);
        // "<q>" is a single trigram that was never trained
        assert_eq!(m.vector("q"), vec![0.0, 0.0]);
    }

    #[test]
    fn neighbors_ties_and_exclusion() {
        let m = toy();
        let nn = m.nearest_neighbors("aa", 1);
        assert_eq!(nn, vec![("bb".to_string(), 1.0)]);
        let all = m.nearest_neighbors("aa", 10);
        let names: Vec<_> = all.iter().map(|(w, _)| w.as_str()).collect();
        assert_eq!(names, ["bb", "cc", "dd"]);
        // OOV query scores every vocabulary word; zero query gives all-zero cosines sorted by word
        let z = m.nearest_neighbors("zzzz", 10);
        assert_eq!(z.iter().map(|(w, _)| w.as_str()).collect::<Vec<_>>(), ["aa", "bb", "cc", "dd"]);
    }

    #[test]
    fn max_similarity() {
        let m = toy();
        let s = NormalizedText::from_tokens(vec!["cc".into(), "aa".into()]);
        assert_eq!(m.max_word_similarity(&s, &m.vector("aa")), 1.0);
        assert_eq!(m.max_word_similarity(&NormalizedText::default(), &[1.0, 0.0]), -1.0);
    }

    #[test]
    fn max_similarity_picks_largest_cosine() {
        // Anchor (1,0); tokens at cosines 0.3 and 0.8.
        let config = EmbeddingConfig { dim: 2, ..Default::default() };
        let s03 = (1.0f64 - 0.09).sqrt() as f32;
        let s08 = (1.0f64 - 0.64).sqrt() as f32;
        let m = EmbeddingModel::from_parts(
            config,
            vec!["lo".into(), "hi".into()],
            vec![1, 1],
            vec![0.3, s03, 0.8, s08],
            BTreeMap::new(),
            vec![],
        );
        let s = NormalizedText::from_tokens(vec!["lo".into(), "hi".into()]);
        assert!((m.max_word_similarity(&s, &[1.0, 0.0]) - 0.8).abs() < 1e-6);
    }
}
