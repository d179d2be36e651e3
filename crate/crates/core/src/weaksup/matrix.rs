use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(i8)]
pub enum Vote {
    Negative = -1,
    Abstain = 0,
    Positive = 1,
}

impl Vote {
    pub fn value(self) -> i8 {
        self as i8
    }

    pub fn from_value(v: i8) -> Option<Vote> {
        match v {
            -1 => Some(Vote::Negative),
            0 => Some(Vote::Abstain),
            1 => Some(Vote::Positive),
            _ => None,
        }
    }

    pub fn is_abstain(self) -> bool {
        self == Vote::Abstain
    }

    pub fn negate(self) -> Vote {
        match self {
            Vote::Negative => Vote::Positive,
            Vote::Abstain => Vote::Abstain,
            Vote::Positive => Vote::Negative,
        }
    }
}

impl Serialize for Vote {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_i8(self.value())
    }
}

impl<'de> Deserialize<'de> for Vote {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = i8::deserialize(d)?;
        Vote::from_value(v).ok_or_else(|| serde::de::Error::custom(format!("vote must be -1, 0 or 1, got {v}")))
    }
}

/// Votes of every labeling function on every group, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    group_ids: Vec<String>,
    lf_names: Vec<String>,
    votes: Vec<Vote>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    lf_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Row {
    group_id: String,
    votes: Vec<Vote>,
}

impl LabelMatrix {
    pub fn new(group_ids: Vec<String>, lf_names: Vec<String>, rows: Vec<Vec<Vote>>) -> Result<Self> {
        if rows.len() != group_ids.len() {
            return Err(Error::Data(format!("{} vote rows for {} groups", rows.len(), group_ids.len())));
        }
        let mut votes = Vec::with_capacity(rows.len() * lf_names.len());
        for (i, r) in rows.into_iter().enumerate() {
            if r.len() != lf_names.len() {
                return Err(Error::Data(format!("row {i} has {} votes, expected {}", r.len(), lf_names.len())));
            }
            votes.extend(r);
        }
        Ok(Self {
            group_ids,
            lf_names,
            votes,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.group_ids.len()
    }

    pub fn n_lfs(&self) -> usize {
        self.lf_names.len()
    }

    pub fn group_ids(&self) -> &[String] {
        &self.group_ids
    }

    pub fn lf_names(&self) -> &[String] {
        &self.lf_names
    }

    pub fn row(&self, i: usize) -> &[Vote] {
        let m = self.lf_names.len();
        &self.votes[i * m..(i + 1) * m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Vote]> {
        (0..self.n_rows()).map(move |i| self.row(i))
    }

    pub fn get(&self, row: usize, lf: usize) -> Vote {
        self.votes[row * self.lf_names.len() + lf]
    }

    pub fn column(&self, lf: usize) -> impl Iterator<Item = Vote> + '_ {
        (0..self.n_rows()).map(move |i| self.get(i, lf))
    }

    pub fn all_abstain(&self, row: usize) -> bool {
        self.row(row).iter().all(|v| v.is_abstain())
    }

    /// Subset of rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> LabelMatrix {
        let mut votes = Vec::with_capacity(rows.len() * self.n_lfs());
        for &r in rows {
            votes.extend_from_slice(self.row(r));
        }
        LabelMatrix {
            group_ids: rows.iter().map(|&r| self.group_ids[r].clone()).collect(),
            lf_names: self.lf_names.clone(),
            votes,
        }
    }

    /// A header line `{"lf_names": [...]}` followed by one
    /// `{"group_id", "votes"}` line per row.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let json = |e: serde_json::Error| Error::Data(e.to_string());
        serde_json::to_writer(&mut w, &Header { lf_names: self.lf_names.clone() }).map_err(json)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        for (i, id) in self.group_ids.iter().enumerate() {
            let row = Row {
                group_id: id.clone(),
                votes: self.row(i).to_vec(),
            };
            serde_json::to_writer(&mut w, &row).map_err(json)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate().filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
        let bad = |i: usize, e: &dyn std::fmt::Display| Error::Data(format!("{}: line {}: {e}", path.display(), i + 1));
        let (i, first) = lines.next().ok_or_else(|| Error::Data(format!("{}: empty label matrix", path.display())))?;
        let first = first.map_err(|e| Error::io(path, e))?;
        let header: Header = serde_json::from_str(&first).map_err(|e| bad(i, &e))?;
        let (mut ids, mut rows) = (Vec::new(), Vec::new());
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            let row: Row = serde_json::from_str(&line).map_err(|e| bad(i, &e))?;
            ids.push(row.group_id);
            rows.push(row.votes);
        }
        LabelMatrix::new(ids, header.lf_names, rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Vote::*;

    #[test]
    fn shape_is_checked() {
        assert!(LabelMatrix::new(vec!["a".into()], vec!["f".into()], vec![vec![Positive, Negative]]).is_err());
        assert!(LabelMatrix::new(vec![], vec!["f".into()], vec![vec![Positive]]).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let m = LabelMatrix::new(
            vec!["a|x".into(), "b|y".into()],
            vec!["f".into(), "g".into()],
            vec![vec![Positive, Abstain], vec![Abstain, Negative]],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        m.write_jsonl(&p).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().contains("\"votes\":[1,0]"));
        assert_eq!(LabelMatrix::read_jsonl(&p).unwrap(), m);
        assert_eq!(m.select_rows(&[1]).row(0), &[Abstain, Negative]);
    }

    #[test]
    fn invalid_vote_rejected() {
        assert!(serde_json::from_str::<Vote>("2").is_err());
        assert_eq!(serde_json::from_str::<Vote>("-1").unwrap(), Negative);
    }
}
