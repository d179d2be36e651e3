use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::txprep::Transaction;

use super::batcher::{Batcher, BatcherPolicy};
use super::clock::Clock;
use super::predictor::Predictor;
use super::topic::{format_probability, EventKind, PredictionPayload, TopicDir};
use super::watcher::{Ingested, ReadinessRule, Watcher};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    /// Input topics, consumed in this order on every poll.
    pub inputs: Vec<String>,
    pub output: String,
    pub policy: BatcherPolicy,
    pub rule: ReadinessRule,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PollOutcome {
    pub consumed: usize,
    pub predictions: Vec<PredictionPayload>,
}

/// Single-threaded consume, cache, batch, score, emit loop.
///
/// State on disk under `state_dir`: `accounts/` holds the watcher cache and
/// `offsets.json` the next unconsumed offset of each input topic. Offsets
/// are committed after the events are cached, so a crash re-delivers at
/// most the uncommitted tail, which the watcher recognises as duplicates.
pub struct InferenceLoop<'a> {
    topics: TopicDir,
    state_dir: PathBuf,
    config: StreamConfig,
    watcher: Watcher,
    batcher: Batcher<Transaction>,
    deferred: BTreeMap<String, Vec<Transaction>>,
    offsets: BTreeMap<String, u64>,
    predictor: &'a Predictor,
    clock: &'a dyn Clock,
}

impl<'a> InferenceLoop<'a> {
    pub fn open(
        topics: TopicDir,
        state_dir: impl Into<PathBuf>,
        config: StreamConfig,
        predictor: &'a Predictor,
        clock: &'a dyn Clock,
    ) -> Result<Self> {
        if config.inputs.iter().any(|t| *t == config.output) {
            return Err(Error::Config(format!("output topic {} is also an input", config.output)));
        }
        let state_dir = state_dir.into();
        let watcher = Watcher::open(state_dir.join("accounts"), config.rule.clone())?;
        let offsets_path = state_dir.join("offsets.json");
        let offsets = match fs::read(&offsets_path) {
            Ok(b) => serde_json::from_slice(&b).map_err(|e| Error::Data(format!("{}: {e}", offsets_path.display())))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(Error::io(&offsets_path, e)),
        };
        let mut batcher = Batcher::new(config.policy)?;
        let mut deferred: BTreeMap<String, Vec<Transaction>> = BTreeMap::new();
        let now = clock.now();
        // Cached but unscored transactions were pending when the previous
        // process stopped.
        let accounts: Vec<String> = watcher.accounts().map(|(a, _)| a.clone()).collect();
        for a in accounts {
            let waiting = watcher.unpredicted(&a);
            if watcher.is_ready(&a) {
                waiting.into_iter().for_each(|t| batcher.push(t, now));
            } else if !waiting.is_empty() {
                deferred.insert(a, waiting);
            }
        }
        Ok(Self {
            topics,
            state_dir,
            config,
            watcher,
            batcher,
            deferred,
            offsets,
            predictor,
            clock,
        })
    }

    pub fn watcher(&self) -> &Watcher {
        &self.watcher
    }

    pub fn pending(&self) -> usize {
        self.batcher.len()
    }

    fn commit_offsets(&self) -> Result<()> {
        let path = self.state_dir.join("offsets.json");
        let tmp = self.state_dir.join(".offsets.json.tmp");
        fs::write(&tmp, serde_json::to_vec(&self.offsets).expect("offsets serialize")).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    /// Consumes every new input event, then emits all batches that are due.
    pub fn poll(&mut self) -> Result<PollOutcome> {
        let mut consumed = 0;
        for topic in self.config.inputs.clone() {
            let from = self.offsets.get(&topic).copied().unwrap_or(0);
            let events = self.topics.read_from(&topic, from)?;
            if events.is_empty() {
                continue;
            }
            for e in &events {
                let now = self.clock.now();
                if let Ingested::Stored {
                    account_id,
                    transaction,
                    ready,
                    became_ready,
                } = self.watcher.ingest(e)?
                {
                    if became_ready {
                        for t in self.deferred.remove(&account_id).unwrap_or_default() {
                            self.batcher.push(t, now);
                        }
                    }
                    if let Some(t) = transaction {
                        if ready {
                            self.batcher.push(t, now);
                        } else {
                            self.deferred.entry(account_id).or_default().push(t);
                        }
                    }
                }
                self.offsets.insert(topic.clone(), e.offset + 1);
                consumed += 1;
            }
            self.commit_offsets()?;
        }
        let mut predictions = Vec::new();
        while let Some(batch) = self.batcher.step(self.clock.now()) {
            predictions.extend(self.process(batch)?);
        }
        Ok(PollOutcome { consumed, predictions })
    }

    /// Scores each account in the batch on everything cached for it and
    /// emits one prediction per batch transaction, in batch order.
    fn process(&mut self, batch: Vec<Transaction>) -> Result<Vec<PredictionPayload>> {
        let mut scores: HashMap<String, BTreeMap<String, f64>> = HashMap::new();
        for t in &batch {
            if !scores.contains_key(&t.account_id) {
                let cached = &self.watcher.account(&t.account_id).expect("batched accounts are cached").transactions;
                scores.insert(t.account_id.clone(), self.predictor.score_transactions(cached)?);
            }
        }
        let mut out = Vec::with_capacity(batch.len());
        let mut done: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for t in &batch {
            let p = scores[&t.account_id][&t.transaction_id];
            let payload = PredictionPayload {
                model_type: self.predictor.model_type.clone(),
                model_version: self.predictor.model_version.clone(),
                transaction_id: t.transaction_id.clone(),
                probability: format_probability(p),
            };
            self.topics.append(
                &self.config.output,
                EventKind::Prediction,
                self.clock.now(),
                serde_json::to_value(&payload).expect("payload serializes"),
            )?;
            done.entry(t.account_id.clone()).or_default().push(t.transaction_id.clone());
            out.push(payload);
        }
        for (account, ids) in done {
            self.watcher.mark_predicted(&account, &ids)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{Classifier, ClassifierConfig, Scaler};
    use crate::embed::{EmbeddingConfig, EmbeddingModel};
    use crate::stream::ManualClock;
    use crate::txprep::{Cents, Day};

    fn predictor() -> Predictor {
        let config = EmbeddingConfig {
            dim: 3,
            ..Default::default()
        };
        let embedding = EmbeddingModel::from_parts(
            config,
            vec!["rent".into(), "coffee".into()],
            vec![5, 5],
            vec![1.0, 0.5, -0.2, -0.3, 0.8, 0.1],
            BTreeMap::new(),
            vec![],
        );
        let cc = ClassifierConfig {
            ts_hidden: 3,
            text_hidden: 3,
            mlp_hidden: vec![4],
            ..Default::default()
        };
        Predictor {
            classifier: Classifier::new(&cc, 3, None).unwrap(),
            embedding,
            scaler: Scaler {
                amount_mean: 3.0,
                amount_std: 2.0,
                delta_mean: 1.0,
                delta_std: 1.5,
                fitted: true,
            },
            model_type: "test/dual-gru".into(),
            model_version: "v1".into(),
        }
    }

    fn tx(account: &str, k: usize, desc: &str) -> Transaction {
        Transaction {
            account_id: account.into(),
            transaction_id: format!("{account}-{k}"),
            date: Day(19_000 + 30 * k as i32),
            amount: Cents(100_000 + k as i64),
            description: desc.into(),
            merchant_name: None,
        }
    }

    fn config(max_count: usize, min_tx: usize) -> StreamConfig {
        StreamConfig {
            inputs: vec!["events".into()],
            output: "predictions".into(),
            policy: BatcherPolicy { max_count, max_age: 10.0 },
            rule: ReadinessRule {
                min_transactions: min_tx,
                required_kinds: vec![EventKind::AccountSignup],
            },
        }
    }

    fn push_tx(t: &TopicDir, tx: &Transaction, at: f64) {
        t.append("events", EventKind::Transaction, at, serde_json::to_value(tx).unwrap()).unwrap();
    }

    fn push_signup(t: &TopicDir, account: &str, at: f64) {
        t.append("events", EventKind::AccountSignup, at, serde_json::json!({ "account_id": account })).unwrap();
    }

    #[test]
    fn ready_account_with_two_transactions() {
        let d = tempfile::tempdir().unwrap();
        let topics = TopicDir::open(d.path().join("topics")).unwrap();
        let p = predictor();
        let clock = ManualClock::new(0.0);
        push_signup(&topics, "a", 0.0);
        push_tx(&topics, &tx("a", 0, "rent"), 0.0);
        push_tx(&topics, &tx("a", 1, "rent"), 0.0);
        let mut l = InferenceLoop::open(topics.clone(), d.path().join("state"), config(2, 1), &p, &clock).unwrap();
        let out = l.poll().unwrap();
        assert_eq!(out.consumed, 3);
        assert_eq!(out.predictions.len(), 2);
        assert!(out.predictions.iter().all(|q| q.model_version == "v1"));
        assert_eq!(out.predictions[0].probability, out.predictions[1].probability);
        let offline = p.score_transactions(&[tx("a", 0, "rent"), tx("a", 1, "rent")]).unwrap();
        assert_eq!(out.predictions[0].probability, format_probability(offline["a-0"]));
        assert_eq!(topics.read_from("predictions", 0).unwrap().len(), 2);
    }

    #[test]
    fn unready_account_gets_nothing_until_signup() {
        let d = tempfile::tempdir().unwrap();
        let topics = TopicDir::open(d.path().join("topics")).unwrap();
        let p = predictor();
        let clock = ManualClock::new(0.0);
        push_tx(&topics, &tx("a", 0, "rent"), 0.0);
        let mut l = InferenceLoop::open(topics.clone(), d.path().join("state"), config(1, 1), &p, &clock).unwrap();
        assert!(l.poll().unwrap().predictions.is_empty());
        clock.advance(100.0);
        assert!(l.poll().unwrap().predictions.is_empty());
        push_signup(&topics, "a", 100.0);
        let out = l.poll().unwrap();
        assert_eq!(out.predictions.len(), 1);
    }

    #[test]
    fn age_trigger_flushes_small_batch() {
        let d = tempfile::tempdir().unwrap();
        let topics = TopicDir::open(d.path().join("topics")).unwrap();
        let p = predictor();
        let clock = ManualClock::new(0.0);
        push_signup(&topics, "a", 0.0);
        push_tx(&topics, &tx("a", 0, "coffee"), 0.0);
        let mut l = InferenceLoop::open(topics.clone(), d.path().join("state"), config(5, 1), &p, &clock).unwrap();
        assert!(l.poll().unwrap().predictions.is_empty());
        clock.advance(9.0);
        assert!(l.poll().unwrap().predictions.is_empty());
        clock.advance(1.0);
        assert_eq!(l.poll().unwrap().predictions.len(), 1);
    }

    #[test]
    fn restart_resumes_pending_work() {
        let d = tempfile::tempdir().unwrap();
        let topics = TopicDir::open(d.path().join("topics")).unwrap();
        let p = predictor();
        let clock = ManualClock::new(0.0);
        push_signup(&topics, "a", 0.0);
        for k in 0..3 {
            push_tx(&topics, &tx("a", k, "rent"), 0.0);
        }
        {
            let mut l = InferenceLoop::open(topics.clone(), d.path().join("state"), config(2, 1), &p, &clock).unwrap();
            assert_eq!(l.poll().unwrap().predictions.len(), 2);
            assert_eq!(l.pending(), 1);
        }
        let mut l = InferenceLoop::open(topics.clone(), d.path().join("state"), config(2, 1), &p, &clock).unwrap();
        assert_eq!(l.pending(), 1);
        let out = l.poll().unwrap();
        assert_eq!(out.consumed, 0);
        clock.advance(10.0);
        let out = l.poll().unwrap();
        assert_eq!(out.predictions.len(), 1);
        assert_eq!(out.predictions[0].transaction_id, "a-2");
    }

    #[test]
    fn output_topic_cannot_be_an_input() {
        let d = tempfile::tempdir().unwrap();
        let topics = TopicDir::open(d.path().join("topics")).unwrap();
        let p = predictor();
        let clock = ManualClock::new(0.0);
        let mut c = config(1, 1);
        c.output = "events".into();
        assert!(InferenceLoop::open(topics, d.path().join("state"), c, &p, &clock).is_err());
    }
}
