//! Filesystem run registry.
//!
//! Layout under the store root:
//!
//! ```text
//! runs/<run_id>/record.json
//! runs/<run_id>/artifacts/<sha256>
//! tasks/<task>/best.json
//! ```
//!
//! Every document is written to a temporary file and renamed into place, so
//! readers see either the old or the new version.

mod artifact;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use artifact::{Artifact, ArtifactKind};

/// Artifact names used by the training pipeline.
pub const CLASSIFIER: &str = "classifier";
pub const EMBEDDING: &str = "embedding";
pub const SCALER: &str = "scaler";
pub const LABEL_MODEL: &str = "label_model";
pub const LF_CONFIG: &str = "lf_config";

/// Environment variable naming the default store root.
pub const STORE_ENV: &str = "TXCLASS_STORE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Started,
    Finished,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub name: String,
    pub kind: ArtifactKind,
    pub sha256: String,
    /// Relative to the run directory.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub status: RunStatus,
    pub started_at: String,
    #[serde(default)]
    pub finished_at: Option<String>,
    pub task: String,
    /// The task configuration exactly as supplied.
    pub config: String,
    pub code_version: String,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
    #[serde(default)]
    pub artifacts: Vec<ArtifactEntry>,
    #[serde(default)]
    pub failure: Option<String>,
}

impl RunRecord {
    pub fn artifact(&self, name: &str) -> Option<&ArtifactEntry> {
        self.artifacts.iter().find(|a| a.name == name)
    }
}

/// Per-task pointer to the best finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPointer {
    pub task: String,
    pub run_id: String,
    pub metric: String,
    pub value: f64,
    /// Incremented every time the pointer advances.
    pub version: u64,
}

/// Artifacts of one run, hash-checked on load.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub record: RunRecord,
    pub version: u64,
    pub artifacts: BTreeMap<String, Vec<u8>>,
}

impl LoadedRun {
    pub fn get<T: Artifact>(&self, name: &str) -> Result<T> {
        let entry = self.record.artifact(name).ok_or_else(|| Error::Integrity {
            name: name.into(),
            reason: format!("run {} has no such artifact", self.record.run_id),
        })?;
        if entry.kind != T::KIND {
            return Err(Error::Integrity {
                name: name.into(),
                reason: format!("stored as {:?}, requested as {:?}", entry.kind, T::KIND),
            });
        }
        T::from_artifact_bytes(&self.artifacts[name])
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content hash of a file, used as the code version of a binary.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().expect("store paths have a parent");
    let tmp = dir.join(format!(".{}.{:016x}.tmp", path.file_name().and_then(|n| n.to_str()).unwrap_or("doc"), rand::rng().random::<u64>()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn valid_name(kind: &str, s: &str) -> Result<()> {
    if s.is_empty() || !s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')) || s.starts_with('.') {
        return Err(Error::Config(format!("{kind} {s:?} must be non-empty ASCII letters, digits, '_', '-' or '.'")));
    }
    Ok(())
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true)
}

/// Exclusive lock on a task's pointer, held as a create-new file.
struct TaskLock(PathBuf);

impl TaskLock {
    fn acquire(path: PathBuf) -> Result<Self> {
        let deadline = Instant::now() + Duration::from_secs(30);
        loop {
            match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(_) => return Ok(TaskLock(path)),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists && Instant::now() < deadline => {
                    std::thread::sleep(Duration::from_millis(5));
                }
                Err(e) => return Err(Error::io(&path, e)),
            }
        }
    }
}

impl Drop for TaskLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    /// Opens (creating if needed) a store at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for d in [root.join("runs"), root.join("tasks")] {
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        Ok(Self { root })
    }

    /// `explicit`, else `$TXCLASS_STORE`, else `./runs-store`.
    pub fn resolve_root(explicit: Option<&Path>) -> PathBuf {
        explicit
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(STORE_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs-store"))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join("runs").join(run_id)
    }

    fn task_dir(&self, task: &str) -> PathBuf {
        self.root.join("tasks").join(task)
    }

    fn save_record(&self, record: &RunRecord) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(record).expect("record serializes");
        write_atomic(&self.run_dir(&record.run_id).join("record.json"), &bytes)
    }

    pub fn start_run(&self, task: &str, config: &str, code_version: &str) -> Result<RunRecord> {
        valid_name("task name", task)?;
        let (dir, run_id) = loop {
            let id = format!("{}-{:08x}", chrono::Utc::now().format("%Y%m%dT%H%M%S%6fZ"), rand::rng().random::<u32>());
            let dir = self.run_dir(&id);
            match fs::create_dir(&dir) {
                Ok(()) => break (dir, id),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(Error::io(&dir, e)),
            }
        };
        let artifacts = dir.join("artifacts");
        fs::create_dir(&artifacts).map_err(|e| Error::io(&artifacts, e))?;
        let record = RunRecord {
            run_id,
            status: RunStatus::Started,
            started_at: now(),
            finished_at: None,
            task: task.into(),
            config: config.into(),
            code_version: code_version.into(),
            metrics: BTreeMap::new(),
            artifacts: Vec::new(),
            failure: None,
        };
        self.save_record(&record)?;
        Ok(record)
    }

    pub fn load_record(&self, run_id: &str) -> Result<RunRecord> {
        valid_name("run id", run_id)?;
        let path = self.run_dir(run_id).join("record.json");
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Integrity {
            name: format!("record {run_id}"),
            reason: e.to_string(),
        })
    }

    /// All records, optionally for one task, in run-id order.
    pub fn list_runs(&self, task: Option<&str>) -> Result<Vec<RunRecord>> {
        let dir = self.root.join("runs");
        let mut ids: Vec<String> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join("record.json").exists())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        ids.sort();
        let mut out = Vec::new();
        for id in ids {
            let r = self.load_record(&id)?;
            if task.is_none_or(|t| t == r.task) {
                out.push(r);
            }
        }
        Ok(out)
    }

    fn require_started(run: &RunRecord) -> Result<()> {
        if run.status != RunStatus::Started {
            return Err(Error::Runtime(format!("run {} is {:?}; only started runs accept changes", run.run_id, run.status)));
        }
        Ok(())
    }

    pub fn log_bytes(&self, run: &mut RunRecord, name: &str, kind: ArtifactKind, bytes: &[u8]) -> Result<ArtifactEntry> {
        Self::require_started(run)?;
        valid_name("artifact name", name)?;
        if run.artifact(name).is_some() {
            return Err(Error::Runtime(format!("run {} already has an artifact named {name}", run.run_id)));
        }
        let sha256 = sha256_hex(bytes);
        let path = format!("artifacts/{sha256}");
        let full = self.run_dir(&run.run_id).join(&path);
        if !full.exists() {
            write_atomic(&full, bytes)?;
        }
        let entry = ArtifactEntry {
            name: name.into(),
            kind,
            sha256,
            path,
        };
        run.artifacts.push(entry.clone());
        self.save_record(run)?;
        Ok(entry)
    }

    pub fn log_artifact<T: Artifact>(&self, run: &mut RunRecord, name: &str, value: &T) -> Result<ArtifactEntry> {
        let bytes = value.to_artifact_bytes()?;
        self.log_bytes(run, name, T::KIND, &bytes)
    }

    /// Reads an artifact and checks its content hash.
    pub fn load_bytes(&self, run: &RunRecord, name: &str) -> Result<Vec<u8>> {
        let entry = run.artifact(name).ok_or_else(|| Error::Integrity {
            name: name.into(),
            reason: format!("run {} has no such artifact", run.run_id),
        })?;
        let full = self.run_dir(&run.run_id).join(&entry.path);
        let bytes = fs::read(&full).map_err(|e| Error::Integrity {
            name: name.into(),
            reason: format!("cannot read {}: {e}", full.display()),
        })?;
        let actual = sha256_hex(&bytes);
        if actual != entry.sha256 {
            return Err(Error::Integrity {
                name: name.into(),
                reason: format!("content hash {actual} does not match recorded {}", entry.sha256),
            });
        }
        Ok(bytes)
    }

    pub fn load_artifact<T: Artifact>(&self, run: &RunRecord, name: &str) -> Result<T> {
        T::from_artifact_bytes(&self.load_bytes(run, name)?)
    }

    pub fn best(&self, task: &str) -> Result<Option<BestPointer>> {
        valid_name("task name", task)?;
        let path = self.task_dir(task).join("best.json");
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|e| Error::Integrity {
                name: format!("best pointer for {task}"),
                reason: e.to_string(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(&path, e)),
        }
    }

    /// Marks the run finished. When `metrics[primary]` beats the task's best
    /// value (or no best exists yet), the best pointer advances to this run;
    /// returns whether it did.
    pub fn finish_run(&self, run: &mut RunRecord, metrics: BTreeMap<String, f64>, primary: &str) -> Result<bool> {
        Self::require_started(run)?;
        if run.artifacts.is_empty() {
            return Err(Error::Runtime(format!("run {} has no artifacts; a finished run needs at least one", run.run_id)));
        }
        let value = *metrics
            .get(primary)
            .ok_or_else(|| Error::Config(format!("primary metric {primary} missing from the finished run's metrics")))?;
        run.metrics = metrics;
        run.status = RunStatus::Finished;
        run.finished_at = Some(now());
        self.save_record(run)?;
        if !value.is_finite() {
            return Ok(false);
        }
        let dir = self.task_dir(&run.task);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let _lock = TaskLock::acquire(dir.join("best.lock"))?;
        let current = self.best(&run.task)?;
        if current.as_ref().is_some_and(|b| b.value >= value) {
            return Ok(false);
        }
        let pointer = BestPointer {
            task: run.task.clone(),
            run_id: run.run_id.clone(),
            metric: primary.into(),
            value,
            version: current.map_or(1, |b| b.version + 1),
        };
        write_atomic(&dir.join("best.json"), &serde_json::to_vec_pretty(&pointer).expect("pointer serializes"))?;
        Ok(true)
    }

    pub fn fail_run(&self, run: &mut RunRecord, reason: &str) -> Result<()> {
        Self::require_started(run)?;
        run.status = RunStatus::Failed;
        run.finished_at = Some(now());
        run.failure = Some(reason.into());
        self.save_record(run)
    }

    /// Loads every artifact of the task's best run after checking that it
    /// was produced by `expected_code_version`. With `allow_mismatch`, a
    /// differing version is logged instead of rejected.
    pub fn load_for_inference(&self, task: &str, expected_code_version: &str, allow_mismatch: bool) -> Result<LoadedRun> {
        let best = self.best(task)?.ok_or_else(|| Error::Integrity {
            name: format!("best pointer for {task}"),
            reason: "no finished run has been recorded for this task".into(),
        })?;
        let record = self.load_record(&best.run_id)?;
        if record.code_version != expected_code_version {
            if !allow_mismatch {
                return Err(Error::Parity {
                    stored: record.code_version,
                    expected: expected_code_version.into(),
                });
            }
            log::warn!(
                "code version mismatch overridden: run {} was produced by {}, running {expected_code_version}",
                record.run_id,
                record.code_version
            );
        }
        let mut artifacts = BTreeMap::new();
        for a in &record.artifacts {
            artifacts.insert(a.name.clone(), self.load_bytes(&record, &a.name)?);
        }
        Ok(LoadedRun {
            record,
            version: best.version,
            artifacts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Scaler;

    fn store() -> (tempfile::TempDir, RunStore) {
        let dir = tempfile::tempdir().unwrap();
        let s = RunStore::open(dir.path()).unwrap();
        (dir, s)
    }

    fn scaler() -> Scaler {
        Scaler {
            amount_mean: 1.25,
            amount_std: 0.1 + 0.2,
            delta_mean: -3.0,
            delta_std: 7.0,
            fitted: true,
        }
    }

    fn finished(s: &RunStore, value: f64, code: &str) -> RunRecord {
        let mut r = s.start_run("rent", "x = 1\n", code).unwrap();
        s.log_artifact(&mut r, "scaler", &scaler()).unwrap();
        s.finish_run(&mut r, BTreeMap::from([("val_ba".into(), value)]), "val_ba").unwrap();
        r
    }

    #[test]
    fn starts_are_distinct_and_readable() {
        let (_d, s) = store();
        let config = "seed = 3\n# comment kept\n";
        let a = s.start_run("rent", config, "abc").unwrap();
        let b = s.start_run("rent", config, "abc").unwrap();
        assert_ne!(a.run_id, b.run_id);
        let back = s.load_record(&a.run_id).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.config.as_bytes(), config.as_bytes());
        assert_eq!(back.status, RunStatus::Started);
    }

    #[test]
    fn artifact_round_trip_is_bitwise() {
        let (_d, s) = store();
        let mut r = s.start_run("rent", "", "abc").unwrap();
        let e = s.log_artifact(&mut r, "scaler", &scaler()).unwrap();
        assert_eq!(e.sha256, sha256_hex(&scaler().to_artifact_bytes().unwrap()));
        let back: Scaler = s.load_artifact(&r, "scaler").unwrap();
        assert_eq!(back.amount_std.to_bits(), scaler().amount_std.to_bits());
        assert_eq!(back, scaler());
        assert!(s.log_artifact(&mut r, "scaler", &scaler()).is_err());
        let unfitted = Scaler::default();
        assert_eq!(s.log_artifact(&mut r, "s2", &unfitted).unwrap_err().exit_code(), 4);
    }

    #[test]
    fn finished_runs_reject_changes() {
        let (_d, s) = store();
        let mut r = finished(&s, 0.7, "abc");
        assert!(s.log_artifact(&mut r, "again", &scaler()).is_err());
        assert!(s.finish_run(&mut r, BTreeMap::from([("val_ba".into(), 0.9)]), "val_ba").is_err());
        let mut empty = s.start_run("rent", "", "abc").unwrap();
        assert!(s.finish_run(&mut empty, BTreeMap::from([("val_ba".into(), 0.9)]), "val_ba").is_err());
    }

    #[test]
    fn best_pointer_only_advances() {
        let (_d, s) = store();
        let a = finished(&s, 0.7, "abc");
        assert_eq!(s.best("rent").unwrap().unwrap().run_id, a.run_id);
        finished(&s, 0.6, "abc");
        let p = s.best("rent").unwrap().unwrap();
        assert_eq!((p.run_id.as_str(), p.version), (a.run_id.as_str(), 1));
        let c = finished(&s, 0.8, "abc");
        let p = s.best("rent").unwrap().unwrap();
        assert_eq!((p.run_id, p.version, p.value), (c.run_id, 2, 0.8));
    }

    #[test]
    fn concurrent_finishes_keep_the_maximum() {
        let (_d, s) = store();
        std::thread::scope(|scope| {
            for i in 0..8 {
                let s = &s;
                scope.spawn(move || finished(s, f64::from(i) / 10.0, "abc"));
            }
        });
        assert_eq!(s.best("rent").unwrap().unwrap().value, 0.7);
        assert_eq!(s.list_runs(Some("rent")).unwrap().len(), 8);
    }

    #[test]
    fn inference_load_checks_code_version() {
        let (_d, s) = store();
        finished(&s, 0.7, "abc");
        let loaded = s.load_for_inference("rent", "abc", false).unwrap();
        assert_eq!(loaded.get::<Scaler>("scaler").unwrap(), scaler());
        let err = s.load_for_inference("rent", "def", false).unwrap_err();
        assert!(matches!(err, Error::Parity { .. }));
        assert_eq!(err.exit_code(), 4);
        assert!(s.load_for_inference("rent", "def", true).is_ok());
        assert!(s.load_for_inference("other", "abc", false).is_err());
    }

    #[test]
    fn missing_or_tampered_artifact_is_named() {
        let (d, s) = store();
        let r = finished(&s, 0.7, "abc");
        let path = d.path().join("runs").join(&r.run_id).join(&r.artifacts[0].path);
        fs::write(&path, b"{}").unwrap();
        let err = s.load_for_inference("rent", "abc", false).unwrap_err();
        assert!(err.to_string().contains("scaler"), "{err}");
        fs::remove_file(&path).unwrap();
        let err = s.load_for_inference("rent", "abc", false).unwrap_err();
        assert!(matches!(&err, Error::Integrity { name, .. } if name == "scaler"), "{err}");
    }

    #[test]
    fn failed_runs_are_recorded() {
        let (_d, s) = store();
        let mut r = s.start_run("rent", "", "abc").unwrap();
        s.fail_run(&mut r, "diverged").unwrap();
        let back = s.load_record(&r.run_id).unwrap();
        assert_eq!(back.status, RunStatus::Failed);
        assert_eq!(back.failure.as_deref(), Some("diverged"));
        assert!(s.best("rent").unwrap().is_none());
    }
}
