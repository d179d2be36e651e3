//! Seeded synthetic transaction corpora with planted category structure.
//!
//! Every account gets a number of category slots; each slot draws a category
//! by prevalence (leftover mass leaves the slot empty) and becomes one
//! merchant instance. Spelling noise (truncation, vowel dropping) is fixed per
//! instance, so all of an instance's transactions form one group.
//! Reference codes, digit runs and case changes vary per transaction and are
//! removed again by normalization.

mod generate;
mod split;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::txprep::{normalize, Day};

pub use generate::{generate, planted_cluster_corpus, truth_labels, TruthRecord};
pub use split::{split, split_indices, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_accounts: usize,
    pub start: Day,
    pub end: Day,
    /// Inclusive range of category slots per account.
    pub slots: [usize; 2],
    /// Fillers for `{name}` in merchant templates.
    #[serde(default)]
    pub names: Vec<String>,
    #[serde(rename = "category")]
    pub categories: Vec<CategorySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategorySpec {
    pub name: String,
    /// Probability that a slot holds this category.
    pub prevalence: f64,
    /// Description templates; `{name}` draws from [`SynthConfig::names`].
    pub merchants: Vec<String>,
    /// Relative template weights (uniform when absent).
    #[serde(default)]
    pub merchant_weights: Option<Vec<f64>>,
    /// Tokens placed before the merchant; `""` means none.
    #[serde(default)]
    pub prefixes: Vec<String>,
    /// Inclusive range of transactions per instance.
    pub count: [usize; 2],
    pub amount: AmountSpec,
    #[serde(default)]
    pub recurrence: Option<Recurrence>,
    #[serde(default)]
    pub noise: NoiseSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmountSpec {
    /// Median of the log-normal per-instance base amount.
    pub median: f64,
    pub sigma: f64,
    /// Log-normal sigma of per-transaction variation around the base.
    #[serde(default)]
    pub jitter: f64,
    /// Chance of one permanent relative change part-way through the series.
    #[serde(default)]
    pub step_prob: f64,
    #[serde(default)]
    pub step: f64,
    /// Credits are written as negative amounts.
    #[serde(default)]
    pub credit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recurrence {
    pub gap_mean: f64,
    pub gap_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    /// Per token, per instance: cut a long token down to 3 or more letters.
    pub truncate: f64,
    /// Per token, per instance: drop the vowels after the first letter.
    pub vowel_drop: f64,
    /// Per transaction: insert an alphanumeric reference code.
    pub refcode: f64,
    /// Per transaction: append a digit run or a short date.
    pub digits: f64,
}

fn prob(name: &str, what: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("category {name}: {what} must be in [0, 1], got {p}")))
    }
}

fn plain_words(text: &str) -> bool {
    let t: Vec<&str> = text.split_whitespace().collect();
    !t.is_empty() && normalize(text, None).tokens().iter().map(String::as_str).eq(t.iter().copied()) && t.iter().all(|w| w.chars().all(|c| c.is_ascii_lowercase()))
}

impl SynthConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: SynthConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn span_days(&self) -> i32 {
        self.end.0 - self.start.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_accounts == 0 {
            return Err(Error::Config("n_accounts must be positive".into()));
        }
        if self.end < self.start {
            return Err(Error::Config(format!("end {} precedes start {}", self.end, self.start)));
        }
        if self.slots[0] > self.slots[1] {
            return Err(Error::Config(format!("slots range {:?} is empty", self.slots)));
        }
        if self.categories.is_empty() {
            return Err(Error::Config("at least one category is required".into()));
        }
        for n in &self.names {
            if !plain_words(n) || n.contains(' ') {
                return Err(Error::Config(format!("name filler {n:?} must be one lowercase word")));
            }
        }
        let mut total = 0.0;
        let mut seen = std::collections::HashSet::new();
        for c in &self.categories {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Config(format!("duplicate category {}", c.name)));
            }
            if !(c.prevalence > 0.0 && c.prevalence < 1.0) {
                return Err(Error::Config(format!("category {}: prevalence must be in (0, 1), got {}", c.name, c.prevalence)));
            }
            total += c.prevalence;
            if c.merchants.is_empty() {
                return Err(Error::Config(format!("category {}: merchant vocabulary is empty", c.name)));
            }
            for m in &c.merchants {
                if m.contains("{name}") && self.names.is_empty() {
                    return Err(Error::Config(format!("category {}: template {m:?} needs names", c.name)));
                }
                if !plain_words(&m.replace("{name}", "x")) {
                    return Err(Error::Config(format!("category {}: merchant {m:?} must be lowercase ASCII words", c.name)));
                }
            }
            if let Some(w) = &c.merchant_weights {
                if w.len() != c.merchants.len() || w.iter().any(|&x| !(x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                    return Err(Error::Config(format!("category {}: merchant_weights must be non-negative, one per merchant", c.name)));
                }
            }
            for p in &c.prefixes {
                if !p.is_empty() && !plain_words(p) {
                    return Err(Error::Config(format!("category {}: prefix {p:?} must be lowercase ASCII words", c.name)));
                }
            }
            if c.count[0] == 0 || c.count[0] > c.count[1] {
                return Err(Error::Config(format!("category {}: count range {:?} is invalid", c.name, c.count)));
            }
            let a = &c.amount;
            if !(a.median > 0.0) || !(a.sigma >= 0.0) || !(a.jitter >= 0.0) || !(a.step > -1.0) {
                return Err(Error::Config(format!("category {}: invalid amount spec", c.name)));
            }
            prob(&c.name, "step_prob", a.step_prob)?;
            let n = &c.noise;
            prob(&c.name, "truncate", n.truncate)?;
            prob(&c.name, "vowel_drop", n.vowel_drop)?;
            prob(&c.name, "refcode", n.refcode)?;
            prob(&c.name, "digits", n.digits)?;
            if let Some(r) = c.recurrence {
                if !(r.gap_mean > 0.0) || !(r.gap_std >= 0.0) {
                    return Err(Error::Config(format!("category {}: gap mean must be positive and std non-negative", c.name)));
                }
                if (self.span_days() as f64) < r.gap_mean {
                    return Err(Error::Config(format!(
                        "category {}: date span of {} days is shorter than one gap of {}",
                        c.name,
                        self.span_days(),
                        r.gap_mean
                    )));
                }
            }
        }
        if total > 1.0 + 1e-12 {
            return Err(Error::Config(format!("category prevalences sum to {total}, above 1")));
        }
        Ok(())
    }
}
