use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Transaction,
    AccountSignup,
    Prediction,
}

/// One line of a topic file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub offset: u64,
    pub kind: EventKind,
    pub timestamp: f64,
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignupPayload {
    pub account_id: String,
}

/// Field names and the six-decimal probability string are part of the
/// output contract.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PredictionPayload {
    pub model_type: String,
    pub model_version: String,
    pub transaction_id: String,
    pub probability: String,
}

pub fn format_probability(p: f64) -> String {
    format!("{p:.6}")
}

/// Directory of append-only JSON-lines topics, one file per topic.
#[derive(Debug, Clone)]
pub struct TopicDir {
    dir: PathBuf,
}

fn check_topic(name: &str) -> Result<()> {
    if name.is_empty() || name.starts_with('.') || !name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')) {
        return Err(Error::Config(format!("invalid topic name {name:?}")));
    }
    Ok(())
}

impl TopicDir {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn path(&self, topic: &str) -> PathBuf {
        self.dir.join(format!("{topic}.jsonl"))
    }

    /// Every event of `topic` with offset at least `offset`. A missing topic
    /// reads as empty.
    pub fn read_from(&self, topic: &str, offset: u64) -> Result<Vec<Event>> {
        check_topic(topic)?;
        let path = self.path(topic);
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let mut out = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            let expected = i as u64;
            let bad = |reason: String| Error::Data(format!("topic {topic}: corrupt record at offset {expected}: {reason}"));
            let event: Event = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
            if event.offset != expected {
                return Err(bad(format!("offset field is {}", event.offset)));
            }
            if expected >= offset {
                out.push(event);
            }
        }
        Ok(out)
    }

    /// Offset the next append will receive.
    pub fn next_offset(&self, topic: &str) -> Result<u64> {
        check_topic(topic)?;
        let path = self.path(topic);
        match File::open(&path) {
            Ok(f) => Ok(BufReader::new(f).lines().count() as u64),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(0),
            Err(e) => Err(Error::io(&path, e)),
        }
    }

    /// Appends and syncs one event; offsets are dense from 0.
    pub fn append(&self, topic: &str, kind: EventKind, timestamp: f64, payload: serde_json::Value) -> Result<Event> {
        let event = Event {
            offset: self.next_offset(topic)?,
            kind,
            timestamp,
            payload,
        };
        let path = self.path(topic);
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        let mut line = serde_json::to_string(&event).expect("event serializes");
        line.push('\n');
        f.write_all(line.as_bytes()).and_then(|_| f.sync_data()).map_err(|e| Error::io(&path, e))?;
        Ok(event)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn append_and_read_back() {
        let d = tempfile::tempdir().unwrap();
        let t = TopicDir::open(d.path()).unwrap();
        let a = t.append("tx", EventKind::Transaction, 1.0, json!({"x": 1})).unwrap();
        let b = t.append("tx", EventKind::AccountSignup, 2.0, json!({"account_id": "a"})).unwrap();
        assert_eq!((a.offset, b.offset), (0, 1));
        assert_eq!(t.read_from("tx", 0).unwrap(), vec![a.clone(), b.clone()]);
        assert_eq!(t.read_from("tx", 1).unwrap(), vec![b]);
        assert!(t.read_from("tx", 5).unwrap().is_empty());
        assert!(t.read_from("missing", 0).unwrap().is_empty());
        assert_eq!(t.read_from("tx", 0).unwrap(), t.read_from("tx", 0).unwrap());
    }

    #[test]
    fn corrupt_line_names_offset() {
        let d = tempfile::tempdir().unwrap();
        let t = TopicDir::open(d.path()).unwrap();
        t.append("tx", EventKind::Transaction, 1.0, json!(null)).unwrap();
        let mut f = OpenOptions::new().append(true).open(t.path("tx")).unwrap();
        f.write_all(b"{not json\n").unwrap();
        let err = t.read_from("tx", 0).unwrap_err();
        assert!(err.to_string().contains("offset 1"), "{err}");
        assert!(t.append("../x", EventKind::Transaction, 0.0, json!(null)).is_err());
    }

    #[test]
    fn prediction_payload_field_names() {
        let p = PredictionPayload {
            model_type: "m".into(),
            model_version: "v1".into(),
            transaction_id: "t".into(),
            probability: format_probability(0.25),
        };
        assert_eq!(
            serde_json::to_string(&p).unwrap(),
            r#"{"model_type":"m","model_version":"v1","transaction_id":"t","probability":"0.250000"}"#
        );
        assert_eq!(format_probability(1.0 / 3.0), "0.333333");
    }
}
