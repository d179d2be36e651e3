//! Orchestration behind the `txclass` binary. Each step reads and writes
//! files so the pipeline can be resumed or inspected at any stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use txclass_core::runstore::{RunStore, STORE_ENV};
use txclass_core::{Error, Result};

pub mod pipeline;
pub mod streaming;
pub mod task;
pub mod tools;

pub use task::TaskSpec;

/// Settings shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Context {
    /// Single-threaded everywhere: sequential runs, one embedding worker.
    pub deterministic: bool,
    /// Store root given on the command line.
    pub store: Option<PathBuf>,
    pub code_version: String,
}

impl Context {
    /// Flag, then environment, then the task file, then `runs-store`.
    pub fn store_root(&self, task: Option<&TaskSpec>) -> PathBuf {
        if let Some(s) = &self.store {
            return s.clone();
        }
        if std::env::var_os(STORE_ENV).is_some() {
            return RunStore::resolve_root(None);
        }
        match task.and_then(|t| t.store.clone()) {
            Some(s) => s,
            None => RunStore::resolve_root(None),
        }
    }

    pub fn open_store(&self, task: Option<&TaskSpec>) -> Result<RunStore> {
        RunStore::open(self.store_root(task))
    }
}

/// A probability attached to one group: weak labels, label-model scores and
/// classifier scores all use this row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub group_id: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub group_id: String,
    pub label: bool,
}

/// Output of a subcommand: a table for people, JSON for machines.
pub trait Report: Serialize {
    fn text(&self) -> String;

    fn json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

/// SHA-256 of the running executable, the default code version.
pub fn executable_hash() -> Result<String> {
    let exe = std::env::current_exe().map_err(|e| Error::Runtime(format!("cannot locate executable: {e}")))?;
    txclass_core::runstore::file_sha256(&exe)
}

pub(crate) fn require(path: &Path, hint: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Data(format!("{} not found; run `{hint}` first", path.display())))
    }
}
