use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::txprep::Transaction;

use super::topic::{Event, EventKind, SignupPayload};

/// Minimum information before an account is scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadinessRule {
    pub min_transactions: usize,
    #[serde(default)]
    pub required_kinds: Vec<EventKind>,
}

impl ReadinessRule {
    pub fn validate(&self) -> Result<()> {
        if self.min_transactions == 0 {
            return Err(Error::Config("readiness rule needs min_transactions >= 1".into()));
        }
        if self.required_kinds.contains(&EventKind::Prediction) {
            return Err(Error::Config("prediction events cannot be a readiness requirement".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "entry", rename_all = "snake_case")]
enum CacheEntry {
    Event { kind: EventKind, payload: serde_json::Value },
    Predicted { transaction_id: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AccountState {
    pub transactions: Vec<Transaction>,
    pub kinds: BTreeSet<EventKind>,
    pub predicted: BTreeSet<String>,
    ids: HashSet<String>,
}

/// What an ingested event changed.
#[derive(Debug, Clone, PartialEq)]
pub enum Ingested {
    /// Already cached (replay after a restart); nothing was written.
    Duplicate,
    Stored {
        account_id: String,
        /// The event was a transaction.
        transaction: Option<Transaction>,
        ready: bool,
        became_ready: bool,
    },
}

/// Per-account event cache, one JSON-lines file per account. State is
/// rebuilt from those files on open.
#[derive(Debug)]
pub struct Watcher {
    dir: PathBuf,
    rule: ReadinessRule,
    accounts: BTreeMap<String, AccountState>,
}

fn account_of(kind: EventKind, payload: &serde_json::Value) -> Result<(String, Option<Transaction>)> {
    let bad = |e: serde_json::Error| Error::Data(format!("{kind:?} payload: {e}"));
    match kind {
        EventKind::Transaction => {
            let t: Transaction = serde_json::from_value(payload.clone()).map_err(bad)?;
            Ok((t.account_id.clone(), Some(t)))
        }
        EventKind::AccountSignup => {
            let s: SignupPayload = serde_json::from_value(payload.clone()).map_err(bad)?;
            Ok((s.account_id, None))
        }
        EventKind::Prediction => Err(Error::Data("the watcher does not consume prediction events".into())),
    }
}

impl Watcher {
    pub fn open(dir: impl Into<PathBuf>, rule: ReadinessRule) -> Result<Self> {
        rule.validate()?;
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut w = Self {
            dir,
            rule,
            accounts: BTreeMap::new(),
        };
        let mut files: Vec<PathBuf> = fs::read_dir(&w.dir)
            .map_err(|e| Error::io(&w.dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        for path in files {
            let f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                let entry: CacheEntry = serde_json::from_str(&line)
                    .map_err(|e| Error::Data(format!("{} line {}: {e}", path.display(), i + 1)))?;
                match entry {
                    CacheEntry::Event { kind, payload } => {
                        let (account, tx) = account_of(kind, &payload)?;
                        w.apply(&account, kind, tx);
                    }
                    CacheEntry::Predicted { transaction_id } => {
                        let account = w.account_from_file(&path)?;
                        w.accounts.entry(account).or_default().predicted.insert(transaction_id);
                    }
                }
            }
        }
        Ok(w)
    }

    fn account_from_file(&self, path: &std::path::Path) -> Result<String> {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        hex::decode(stem)
            .ok()
            .and_then(|b| String::from_utf8(b).ok())
            .ok_or_else(|| Error::Data(format!("cache file name {} is not a hex account id", path.display())))
    }

    fn file(&self, account: &str) -> PathBuf {
        self.dir.join(format!("{}.jsonl", hex::encode(account)))
    }

    fn append(&self, account: &str, entry: &CacheEntry) -> Result<()> {
        let path = self.file(account);
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        let mut line = serde_json::to_string(entry).expect("cache entry serializes");
        line.push('\n');
        f.write_all(line.as_bytes()).and_then(|_| f.sync_data()).map_err(|e| Error::io(&path, e))
    }

    fn is_duplicate(&self, account: &str, kind: EventKind, tx: Option<&Transaction>) -> bool {
        let Some(s) = self.accounts.get(account) else {
            return false;
        };
        match tx {
            Some(t) => s.ids.contains(&t.transaction_id),
            None => s.kinds.contains(&kind),
        }
    }

    fn apply(&mut self, account: &str, kind: EventKind, tx: Option<Transaction>) {
        if self.is_duplicate(account, kind, tx.as_ref()) {
            return;
        }
        let s = self.accounts.entry(account.to_string()).or_default();
        s.kinds.insert(kind);
        if let Some(t) = tx {
            s.ids.insert(t.transaction_id.clone());
            s.transactions.push(t);
        }
    }

    /// Caches the event (durably, before acknowledging) and reports the
    /// account's readiness.
    pub fn ingest(&mut self, event: &Event) -> Result<Ingested> {
        let (account, tx) = account_of(event.kind, &event.payload)?;
        if self.is_duplicate(&account, event.kind, tx.as_ref()) {
            return Ok(Ingested::Duplicate);
        }
        let was_ready = self.is_ready(&account);
        self.append(
            &account,
            &CacheEntry::Event {
                kind: event.kind,
                payload: event.payload.clone(),
            },
        )?;
        self.apply(&account, event.kind, tx.clone());
        let ready = self.is_ready(&account);
        Ok(Ingested::Stored {
            account_id: account,
            transaction: tx,
            ready,
            became_ready: ready && !was_ready,
        })
    }

    pub fn mark_predicted(&mut self, account: &str, transaction_ids: &[String]) -> Result<()> {
        for id in transaction_ids {
            self.append(
                account,
                &CacheEntry::Predicted {
                    transaction_id: id.clone(),
                },
            )?;
            self.accounts.entry(account.to_string()).or_default().predicted.insert(id.clone());
        }
        Ok(())
    }

    pub fn is_ready(&self, account: &str) -> bool {
        self.accounts.get(account).is_some_and(|s| {
            s.transactions.len() >= self.rule.min_transactions && self.rule.required_kinds.iter().all(|k| s.kinds.contains(k))
        })
    }

    pub fn account(&self, account: &str) -> Option<&AccountState> {
        self.accounts.get(account)
    }

    pub fn accounts(&self) -> impl Iterator<Item = (&String, &AccountState)> {
        self.accounts.iter()
    }

    /// Cached transactions without a prediction, in arrival order.
    pub fn unpredicted(&self, account: &str) -> Vec<Transaction> {
        self.accounts
            .get(account)
            .map(|s| s.transactions.iter().filter(|t| !s.predicted.contains(&t.transaction_id)).cloned().collect())
            .unwrap_or_default()
    }

    /// `(account, transactions, kinds, ready)` for comparing states.
    pub fn snapshot(&self) -> Vec<(String, Vec<String>, Vec<EventKind>, bool)> {
        self.accounts
            .iter()
            .map(|(a, s)| {
                (
                    a.clone(),
                    s.transactions.iter().map(|t| t.transaction_id.clone()).collect(),
                    s.kinds.iter().copied().collect(),
                    self.is_ready(a),
                )
            })
            .collect()
    }
}
