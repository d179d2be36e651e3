//! Subcommands that work on plain files without a task file.

use std::path::{Path, PathBuf};

use serde::Serialize;
use txclass_core::embed::EmbeddingModel;
use txclass_core::synthgen::{generate, SynthConfig};
use txclass_core::txprep::{group, read_transactions, write_groups, write_jsonl, write_transactions};
use txclass_core::weaksup::expand_anchor;
use txclass_core::{Error, Result};

use crate::Report;

#[derive(Debug, Clone, Serialize)]
pub struct SynthReport {
    pub accounts: usize,
    pub transactions: usize,
    pub truth_records: usize,
    pub transactions_path: PathBuf,
    pub truth_path: PathBuf,
}

impl Report for SynthReport {
    fn text(&self) -> String {
        format!(
            "{} transactions over {} accounts, {} truth records\nwritten {}\nwritten {}\n",
            self.transactions,
            self.accounts,
            self.truth_records,
            self.transactions_path.display(),
            self.truth_path.display()
        )
    }
}

/// Writes `transactions.jsonl` and `truth.jsonl` into `out`.
pub fn synth_generate(config: &Path, out: &Path) -> Result<SynthReport> {
    let cfg = SynthConfig::load(config)?;
    let (txs, truth) = generate(&cfg)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let transactions_path = out.join("transactions.jsonl");
    let truth_path = out.join("truth.jsonl");
    write_transactions(&transactions_path, &txs)?;
    write_jsonl(&truth_path, &truth)?;
    let mut accounts: Vec<&str> = txs.iter().map(|t| t.account_id.as_str()).collect();
    accounts.sort_unstable();
    accounts.dedup();
    Ok(SynthReport {
        accounts: accounts.len(),
        transactions: txs.len(),
        truth_records: truth.len(),
        transactions_path,
        truth_path,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PrepReport {
    pub transactions: usize,
    pub groups: usize,
    pub empty_text_groups: usize,
    pub path: PathBuf,
}

impl Report for PrepReport {
    fn text(&self) -> String {
        format!(
            "{} transactions into {} groups ({} with empty text)\nwritten {}\n",
            self.transactions,
            self.groups,
            self.empty_text_groups,
            self.path.display()
        )
    }
}

pub fn prep(input: &Path, output: &Path) -> Result<PrepReport> {
    let txs = read_transactions(input)?;
    let groups = group(&txs);
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_groups(output, &groups)?;
    Ok(PrepReport {
        transactions: txs.len(),
        groups: groups.len(),
        empty_text_groups: groups.iter().filter(|g| g.normalized_text.is_empty()).count(),
        path: output.to_path_buf(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct WordList {
    pub query: String,
    pub in_vocabulary: bool,
    pub words: Vec<(String, f64)>,
}

impl Report for WordList {
    fn text(&self) -> String {
        let mut s = String::new();
        if !self.in_vocabulary {
            s.push_str(&format!("({} is out of vocabulary; using its subwords)\n", self.query));
        }
        for (w, c) in &self.words {
            s.push_str(&format!("{c:>8.4}  {w}\n"));
        }
        s
    }
}

pub fn neighbors(model: &Path, word: &str, k: usize) -> Result<WordList> {
    let m = EmbeddingModel::load(model)?;
    Ok(WordList {
        query: word.to_string(),
        in_vocabulary: m.contains(word),
        words: m.nearest_neighbors(word, k),
    })
}

pub fn anchor_expand(model: &Path, word: &str, threshold: f64) -> Result<WordList> {
    let m = EmbeddingModel::load(model)?;
    Ok(WordList {
        query: word.to_string(),
        in_vocabulary: m.contains(word),
        words: expand_anchor(&m, word, threshold)?,
    })
}
