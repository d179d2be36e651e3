//! `stream publish` and `stream run`.

use std::path::Path;
use std::time::Duration;

use serde::Serialize;
use txclass_core::stream::{Clock, EventKind, InferenceLoop, SignupPayload, StreamConfig, SystemClock, TopicDir};
use txclass_core::txprep::read_transactions;
use txclass_core::{Error, Result};

use crate::pipeline::load_predictor;
use crate::{Context, Report, TaskSpec};

pub fn load_stream_config(path: &Path) -> Result<StreamConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: StreamConfig = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.policy.validate()?;
    cfg.rule.validate()?;
    if cfg.inputs.is_empty() {
        return Err(Error::Config("stream config needs at least one input topic".into()));
    }
    Ok(cfg)
}

#[derive(Debug, Clone, Serialize)]
pub struct PublishReport {
    pub transactions: usize,
    pub signups: usize,
    pub next_offsets: Vec<(String, u64)>,
}

impl Report for PublishReport {
    fn text(&self) -> String {
        let mut s = format!("published {} transactions, {} signups\n", self.transactions, self.signups);
        for (t, o) in &self.next_offsets {
            s.push_str(&format!("{t}: next offset {o}\n"));
        }
        s
    }
}

/// Appends the transactions of `input` to `topic`, keeping only the first
/// `max_accounts` accounts in sorted order when given. With `signup_topic`,
/// one signup event per account follows.
pub fn publish(topics: &Path, input: &Path, topic: &str, signup_topic: Option<&str>, max_accounts: Option<usize>) -> Result<PublishReport> {
    let dir = TopicDir::open(topics)?;
    let clock = SystemClock;
    let mut txs = read_transactions(input)?;
    if let Some(limit) = max_accounts {
        let mut ids: Vec<&str> = txs.iter().map(|t| t.account_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        let keep: std::collections::HashSet<String> = ids.into_iter().take(limit).map(str::to_string).collect();
        txs.retain(|t| keep.contains(&t.account_id));
    }
    for t in &txs {
        let payload = serde_json::to_value(t).map_err(|e| Error::Data(e.to_string()))?;
        dir.append(topic, EventKind::Transaction, clock.now(), payload)?;
    }
    let mut offsets = vec![(topic.to_string(), dir.next_offset(topic)?)];
    let mut signups = 0;
    if let Some(st) = signup_topic {
        let mut accounts: Vec<&str> = txs.iter().map(|t| t.account_id.as_str()).collect();
        accounts.sort_unstable();
        accounts.dedup();
        for a in &accounts {
            let payload = serde_json::to_value(SignupPayload { account_id: a.to_string() }).expect("signup serializes");
            dir.append(st, EventKind::AccountSignup, clock.now(), payload)?;
        }
        signups = accounts.len();
        offsets.push((st.to_string(), dir.next_offset(st)?));
    }
    Ok(PublishReport {
        transactions: txs.len(),
        signups,
        next_offsets: offsets,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StreamReport {
    pub model_version: String,
    pub polls: usize,
    pub consumed: usize,
    pub predictions: usize,
    pub pending: usize,
}

impl Report for StreamReport {
    fn text(&self) -> String {
        format!(
            "model {}: {} polls, {} events consumed, {} predictions emitted, {} pending\n",
            self.model_version, self.polls, self.consumed, self.predictions, self.pending
        )
    }
}

pub struct RunOptions {
    /// Poll once and return.
    pub once: bool,
    /// Return after this many seconds without input or pending work.
    pub idle_exit: Option<f64>,
    pub poll_interval: Duration,
    pub allow_mismatch: bool,
}

/// Runs the inference loop of the task's best model.
pub fn run(ctx: &Context, spec: &TaskSpec, config: StreamConfig, topics: &Path, state: &Path, opts: &RunOptions) -> Result<StreamReport> {
    let store = ctx.open_store(Some(spec))?;
    let predictor = load_predictor(ctx, &store, &spec.task, opts.allow_mismatch)?;
    let clock = SystemClock;
    let mut lp = InferenceLoop::open(TopicDir::open(topics)?, state, config, &predictor, &clock)?;
    let mut report = StreamReport {
        model_version: predictor.model_version.clone(),
        polls: 0,
        consumed: 0,
        predictions: 0,
        pending: 0,
    };
    let mut idle_since = clock.now();
    loop {
        let out = lp.poll()?;
        report.polls += 1;
        report.consumed += out.consumed;
        report.predictions += out.predictions.len();
        if !out.predictions.is_empty() {
            log::info!("emitted {} predictions", out.predictions.len());
        }
        if opts.once {
            break;
        }
        let now = clock.now();
        if out.consumed > 0 || lp.pending() > 0 {
            idle_since = now;
        } else if opts.idle_exit.is_some_and(|limit| now - idle_since >= limit) {
            break;
        }
        std::thread::sleep(opts.poll_interval);
    }
    report.pending = lp.pending();
    Ok(report)
}
