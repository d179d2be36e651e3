use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::matrix::{LabelMatrix, Vote};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfStats {
    pub name: String,
    pub coverage: f64,
    pub overlap: f64,
    pub conflict: f64,
    /// Accuracy on non-abstaining rows that have a gold label.
    pub accuracy: Option<f64>,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfReport {
    pub n_rows: usize,
    pub lfs: Vec<LfStats>,
}

/// Per-function coverage, overlap and conflict rates, plus accuracy against
/// `dev_labels` when given (`None` entries are unlabelled rows).
pub fn lf_report(matrix: &LabelMatrix, dev_labels: Option<&[Option<bool>]>) -> Result<LfReport> {
    if let Some(d) = dev_labels {
        if d.len() != matrix.n_rows() {
            return Err(Error::Data(format!("{} dev labels for {} label-matrix rows", d.len(), matrix.n_rows())));
        }
    }
    let n = matrix.n_rows();
    let m = matrix.n_lfs();
    let mut lfs = Vec::with_capacity(m);
    for j in 0..m {
        let (mut covered, mut overlapped, mut conflicted) = (0usize, 0usize, 0usize);
        let (mut positives, mut negatives) = (0usize, 0usize);
        let (mut correct, mut labelled) = (0usize, 0usize);
        for i in 0..n {
            let row = matrix.row(i);
            let v = row[j];
            if v.is_abstain() {
                continue;
            }
            covered += 1;
            match v {
                Vote::Positive => positives += 1,
                _ => negatives += 1,
            }
            let others = row.iter().enumerate().filter(|&(k, o)| k != j && !o.is_abstain());
            let (mut any, mut against) = (false, false);
            for (_, &o) in others {
                any = true;
                against |= o != v;
            }
            overlapped += usize::from(any);
            conflicted += usize::from(against);
            if let Some(Some(gold)) = dev_labels.map(|d| d[i]) {
                labelled += 1;
                correct += usize::from((v == Vote::Positive) == gold);
            }
        }
        let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
        lfs.push(LfStats {
            name: matrix.lf_names()[j].clone(),
            coverage: frac(covered),
            overlap: frac(overlapped),
            conflict: frac(conflicted),
            accuracy: (labelled > 0).then(|| correct as f64 / labelled as f64),
            positives,
            negatives,
        });
    }
    Ok(LfReport { n_rows: n, lfs })
}

impl LfReport {
    /// Aligned-column text table.
    pub fn to_table(&self) -> String {
        let width = self.lfs.iter().map(|l| l.name.len()).max().unwrap_or(0).max(4);
        let mut out = format!(
            "{:<width$}  {:>8}  {:>8}  {:>8}  {:>8}  {:>7}  {:>7}\n",
            "name", "coverage", "overlap", "conflict", "accuracy", "pos", "neg"
        );
        for l in &self.lfs {
            let acc = l.accuracy.map_or_else(|| "-".to_string(), |a| format!("{a:.4}"));
            out.push_str(&format!(
                "{:<width$}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8}  {:>7}  {:>7}\n",
                l.name, l.coverage, l.overlap, l.conflict, acc, l.positives, l.negatives
            ));
        }
        out.push_str(&format!("rows: {}\n", self.n_rows));
        out
    }
}
