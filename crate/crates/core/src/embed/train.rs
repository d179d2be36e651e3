use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::txprep::NormalizedText;

use super::{ngram_buckets, EmbeddingConfig, EmbeddingModel};

/// Losses observed during training.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainStats {
    /// Mean negative-sampling loss per (center, context) pair for each epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean loss over consecutive tenths of the first epoch (worker 0 only).
    pub first_epoch_curve: Vec<f64>,
    pub pairs_seen: u64,
}

/// f32 table shared between Hogwild workers. Updates are a racy
/// load-modify-store; with one worker they are plain sequential writes.
struct SharedTable {
    data: Vec<AtomicU32>,
    dim: usize,
}

impl SharedTable {
    fn from_vec(v: Vec<f32>, dim: usize) -> Self {
        Self {
            data: v.into_iter().map(|x| AtomicU32::new(x.to_bits())).collect(),
            dim,
        }
    }

    #[inline]
    fn get(&self, row: usize, col: usize) -> f32 {
        f32::from_bits(self.data[row * self.dim + col].load(Ordering::Relaxed))
    }

    #[inline]
    fn add(&self, row: usize, col: usize, delta: f32) {
        let cell = &self.data[row * self.dim + col];
        let v = f32::from_bits(cell.load(Ordering::Relaxed)) + delta;
        cell.store(v.to_bits(), Ordering::Relaxed);
    }

    fn into_vec(self) -> Vec<f32> {
        self.data.into_iter().map(|a| f32::from_bits(a.into_inner())).collect()
    }
}

struct Vocab {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

fn build_vocab(corpus: &[NormalizedText], min_count: usize) -> Vocab {
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for s in corpus {
        for t in s.tokens() {
            *freq.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut entries: Vec<(&str, u64)> = freq.into_iter().filter(|&(_, c)| c >= min_count as u64).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let words: Vec<String> = entries.iter().map(|(w, _)| w.to_string()).collect();
    let counts = entries.iter().map(|&(_, c)| c).collect();
    let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    Vocab { words, counts, index }
}

pub fn train_embedding(corpus: &[NormalizedText], config: &EmbeddingConfig) -> Result<EmbeddingModel> {
    train_embedding_with_stats(corpus, config).map(|(m, _)| m)
}

/// Skip-gram with negative sampling over subword-composed inputs.
pub fn train_embedding_with_stats(corpus: &[NormalizedText], config: &EmbeddingConfig) -> Result<(EmbeddingModel, TrainStats)> {
    config.validate()?;
    let vocab = build_vocab(corpus, config.min_count);
    if vocab.words.is_empty() {
        return Err(Error::EmptyVocabulary {
            min_count: config.min_count,
        });
    }
    let dim = config.dim;
    let n_words = vocab.words.len();

    // Input rows: one per word, then one per distinct n-gram bucket.
    let mut ngram_rows: BTreeMap<u32, usize> = BTreeMap::new();
    let word_buckets: Vec<Vec<u32>> = vocab
        .words
        .iter()
        .map(|w| ngram_buckets(w, config.min_n, config.max_n, config.bucket_count))
        .collect();
    for bs in &word_buckets {
        for &b in bs {
            let next = ngram_rows.len();
            ngram_rows.entry(b).or_insert(next);
        }
    }
    let components: Vec<Vec<usize>> = word_buckets
        .iter()
        .enumerate()
        .map(|(i, bs)| {
            let mut c = vec![i];
            c.extend(bs.iter().map(|b| n_words + ngram_rows[b]));
            c
        })
        .collect();
    let n_input = n_words + ngram_rows.len();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bound = 1.0 / dim as f32;
    let input_init: Vec<f32> = (0..n_input * dim).map(|_| rng.random_range(-bound..bound)).collect();
    let input = SharedTable::from_vec(input_init, dim);
    let output = SharedTable::from_vec(vec![0.0; n_words * dim], dim);

    let sentences: Vec<Vec<usize>> = corpus
        .iter()
        .map(|s| s.tokens().iter().filter_map(|t| vocab.index.get(t).copied()).collect::<Vec<_>>())
        .filter(|s: &Vec<usize>| s.len() > 1)
        .collect();
    let tokens_per_epoch: u64 = sentences.iter().map(|s| s.len() as u64).sum();
    let total_tokens = (tokens_per_epoch * config.epochs as u64).max(1);

    let weights: Vec<f64> = vocab.counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
    let negatives = WeightedIndex::new(&weights).map_err(|e| Error::Runtime(format!("negative table: {e}")))?;

    let processed = AtomicU64::new(0);
    let shared = Shared {
        config,
        input: &input,
        output: &output,
        components: &components,
        negatives: &negatives,
        processed: &processed,
        total_tokens,
    };

    let mut stats = TrainStats::default();
    let workers = config.workers.min(sentences.len().max(1));
    for epoch in 0..config.epochs {
        let results: Vec<WorkerResult> = if workers == 1 {
            vec![shared.run(&sentences, config.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15), epoch == 0)]
        } else {
            let chunk = sentences.len().div_ceil(workers);
            std::thread::scope(|scope| {
                let handles: Vec<_> = sentences
                    .chunks(chunk)
                    .enumerate()
                    .map(|(w, part)| {
                        let shared = &shared;
                        let seed = config.seed ^ ((epoch * workers + w) as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
                        scope.spawn(move || shared.run(part, seed, epoch == 0 && w == 0))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("embedding worker panicked")).collect()
            })
        };
        let (loss, pairs) = results.iter().fold((0.0, 0u64), |acc, r| (acc.0 + r.loss, acc.1 + r.pairs));
        stats.epoch_losses.push(if pairs > 0 { loss / pairs as f64 } else { 0.0 });
        stats.pairs_seen += pairs;
        if epoch == 0 {
            stats.first_epoch_curve = results.into_iter().next().map(|r| r.curve).unwrap_or_default();
        }
    }

    let input = input.into_vec();
    let mut word_vectors = vec![0.0f32; n_words * dim];
    for (i, comps) in components.iter().enumerate() {
        let mut acc = vec![0.0f64; dim];
        for &r in comps {
            for (a, &x) in acc.iter_mut().zip(&input[r * dim..(r + 1) * dim]) {
                *a += x as f64;
            }
        }
        for (o, a) in word_vectors[i * dim..(i + 1) * dim].iter_mut().zip(acc) {
            *o = (a / comps.len() as f64) as f32;
        }
    }
    let ngram_vectors = input[n_words * dim..].to_vec();
    if word_vectors.iter().chain(&ngram_vectors).any(|x| !x.is_finite()) {
        return Err(Error::Runtime("embedding training produced non-finite values".into()));
    }
    let model = EmbeddingModel::from_parts(config.clone(), vocab.words, vocab.counts, word_vectors, ngram_rows, ngram_vectors);
    Ok((model, stats))
}

struct Shared<'a> {
    config: &'a EmbeddingConfig,
    input: &'a SharedTable,
    output: &'a SharedTable,
    components: &'a [Vec<usize>],
    negatives: &'a WeightedIndex<f64>,
    processed: &'a AtomicU64,
    total_tokens: u64,
}

struct WorkerResult {
    loss: f64,
    pairs: u64,
    curve: Vec<f64>,
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Shared<'_> {
    fn run(&self, sentences: &[Vec<usize>], seed: u64, track_curve: bool) -> WorkerResult {
        let dim = self.config.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hidden = vec![0.0f32; dim];
        let mut grad = vec![0.0f32; dim];
        let (mut loss, mut pairs) = (0.0f64, 0u64);

        let local_tokens: u64 = sentences.iter().map(|s| s.len() as u64).sum();
        let tenth = (local_tokens / 10).max(1);
        let mut curve = Vec::new();
        let (mut bucket_loss, mut bucket_pairs, mut seen) = (0.0f64, 0u64, 0u64);

        for sentence in sentences {
            for (pos, &center) in sentence.iter().enumerate() {
                let done = self.processed.fetch_add(1, Ordering::Relaxed);
                let lr = (self.config.learning_rate * (1.0 - done as f64 / self.total_tokens as f64)).max(self.config.learning_rate * 1e-4) as f32;
                let radius = rng.random_range(1..=self.config.window);
                let lo = pos.saturating_sub(radius);
                let hi = (pos + radius).min(sentence.len() - 1);
                let comps = &self.components[center];
                let scale = 1.0 / comps.len() as f32;
                for ctx_pos in lo..=hi {
                    if ctx_pos == pos {
                        continue;
                    }
                    hidden.iter_mut().for_each(|h| *h = 0.0);
                    for &r in comps {
                        for (c, h) in hidden.iter_mut().enumerate() {
                            *h += self.input.get(r, c);
                        }
                    }
                    hidden.iter_mut().for_each(|h| *h *= scale);
                    grad.iter_mut().for_each(|g| *g = 0.0);

                    let target = sentence[ctx_pos];
                    let mut pair_loss = self.binary_update(&hidden, &mut grad, target, true, lr);
                    for _ in 0..self.config.negatives {
                        let mut neg = self.negatives.sample(&mut rng);
                        for _ in 0..8 {
                            if neg != target {
                                break;
                            }
                            neg = self.negatives.sample(&mut rng);
                        }
                        if neg == target {
                            continue;
                        }
                        pair_loss += self.binary_update(&hidden, &mut grad, neg, false, lr);
                    }
                    for &r in comps {
                        for (c, &g) in grad.iter().enumerate() {
                            self.input.add(r, c, g * scale);
                        }
                    }
                    loss += pair_loss;
                    pairs += 1;
                    bucket_loss += pair_loss;
                    bucket_pairs += 1;
                }
                seen += 1;
                if track_curve && seen % tenth == 0 && bucket_pairs > 0 {
                    curve.push(bucket_loss / bucket_pairs as f64);
                    bucket_loss = 0.0;
                    bucket_pairs = 0;
                }
            }
        }
        if track_curve && bucket_pairs > 0 {
            curve.push(bucket_loss / bucket_pairs as f64);
        }
        WorkerResult { loss, pairs, curve }
    }

    /// One logistic step on output row `word`; accumulates the input gradient
    /// into `grad` and returns the pair's loss term.
    fn binary_update(&self, hidden: &[f32], grad: &mut [f32], word: usize, positive: bool, lr: f32) -> f64 {
        let score: f32 = hidden.iter().enumerate().map(|(c, &h)| h * self.output.get(word, c)).sum();
        let p = sigmoid(score);
        let label = if positive { 1.0 } else { 0.0 };
        let alpha = lr * (label - p);
        for (c, (&h, g)) in hidden.iter().zip(grad.iter_mut()).enumerate() {
            *g += alpha * self.output.get(word, c);
            self.output.add(word, c, alpha * h);
        }
        let prob = if positive { p } else { 1.0 - p };
        -(prob.max(1e-7) as f64).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sentence(words: &[&str]) -> NormalizedText {
        NormalizedText::from_tokens(words.iter().map(|w| w.to_string()).collect())
    }

    fn tiny_corpus() -> Vec<NormalizedText> {
        let mut c = Vec::new();
        for i in 0..200 {
            if i % 2 == 0 {
                c.push(sentence(&["rent", "rentpay", "rents", "landlord"]));
            } else {
                c.push(sentence(&["coffee", "latte", "espresso", "cafe"]));
            }
        }
        c
    }

    fn small_config() -> EmbeddingConfig {
        EmbeddingConfig {
            dim: 16,
            min_count: 1,
            epochs: 3,
            window: 3,
            bucket_count: 100_003,
            ..Default::default()
        }
    }

    #[test]
    fn empty_vocabulary_is_an_error() {
        let corpus = vec![sentence(&["a", "b"]); 3];
        let c = EmbeddingConfig { min_count: 10, ..small_config() };
        assert!(matches!(train_embedding(&corpus, &c), Err(Error::EmptyVocabulary { min_count: 10 })));
    }

    #[test]
    fn single_worker_is_bitwise_deterministic() {
        let a = train_embedding(&tiny_corpus(), &small_config()).unwrap();
        let b = train_embedding(&tiny_corpus(), &small_config()).unwrap();
        assert_eq!(a, b);
        let c = train_embedding(&tiny_corpus(), &EmbeddingConfig { seed: 2, ..small_config() }).unwrap();
        assert_ne!(a.word_vectors, c.word_vectors);
    }

    #[test]
    fn co_occurring_words_are_closer() {
        let m = train_embedding(&tiny_corpus(), &small_config()).unwrap();
        let rent = m.vector("rent");
        let same = super::super::cosine(&rent, &m.vector("rentpay"));
        let other = super::super::cosine(&rent, &m.vector("coffee"));
        assert!(same > other, "{same} vs {other}");
    }

    #[test]
    fn first_epoch_loss_decreases() {
        let c = EmbeddingConfig { epochs: 1, ..small_config() };
        let (_, stats) = train_embedding_with_stats(&tiny_corpus(), &c).unwrap();
        let curve = &stats.first_epoch_curve;
        assert!(curve.len() >= 5);
        assert!(curve.last().unwrap() < curve.first().unwrap(), "{curve:?}");
    }

    #[test]
    fn in_vocabulary_vector_is_mean_of_components() {
        let m = train_embedding(&tiny_corpus(), &small_config()).unwrap();
        for w in m.vocabulary() {
            for &x in &m.vector(w) {
                assert!(x.is_finite());
            }
        }
        // OOV composition equals the mean of the known n-gram rows.
        let oov = "rentp";
        let known: Vec<&[f32]> = m.buckets(oov).into_iter().filter_map(|b| m.ngram_vector(b)).collect();
        assert!(!known.is_empty());
        let v = m.vector(oov);
        for c in 0..m.dim() {
            let mean = known.iter().map(|r| r[c] as f64).sum::<f64>() / known.len() as f64;
            assert!((v[c] as f64 - mean).abs() < 1e-6);
        }
    }

    #[test]
    fn multi_worker_trains() {
        let c = EmbeddingConfig { workers: 4, ..small_config() };
        let m = train_embedding(&tiny_corpus(), &c).unwrap();
        assert_eq!(m.vocabulary().len(), 8);
        assert!(m.word_vectors.iter().all(|x| x.is_finite()));
    }
}
