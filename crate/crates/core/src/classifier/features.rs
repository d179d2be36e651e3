use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use txclass_nn::Tensor;

use crate::embed::EmbeddingModel;
use crate::error::{Error, Result};
use crate::txprep::{SparseSeries, TransactionGroup};
use crate::weaksup::LabelMatrix;

use super::ClassifierConfig;

fn signed_log(a: f64) -> f64 {
    a.signum() * a.abs().ln_1p()
}

/// Standardization state for the two series channels, fitted on training
/// groups and reused unchanged at inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub amount_mean: f64,
    pub amount_std: f64,
    pub delta_mean: f64,
    pub delta_std: f64,
    pub fitted: bool,
}

impl Default for Scaler {
    fn default() -> Self {
        Self {
            amount_mean: 0.0,
            amount_std: 1.0,
            delta_mean: 0.0,
            delta_std: 1.0,
            fitted: false,
        }
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 1.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

impl Scaler {
    /// Population mean/std of `sign(a) ln(1+|a|)` and `ln(1+delta)` over
    /// every series entry. A zero spread is replaced by 1.
    pub fn fit(groups: &[TransactionGroup]) -> Self {
        let mut amounts = Vec::new();
        let mut deltas = Vec::new();
        for g in groups {
            for e in &g.series.entries {
                amounts.push(signed_log(e.amount.as_f64()));
                deltas.push((e.delta_days as f64).ln_1p());
            }
        }
        let (amount_mean, amount_std) = mean_std(&amounts);
        let (delta_mean, delta_std) = mean_std(&deltas);
        Self {
            amount_mean,
            amount_std,
            delta_mean,
            delta_std,
            fitted: true,
        }
    }

    /// `L x 2` rows of (scaled amount, scaled gap), most recent first.
    pub fn transform(&self, series: &SparseSeries, max_len: usize) -> Result<Tensor> {
        if !self.fitted {
            return Err(Error::Integrity {
                name: "scaler".into(),
                reason: "transform called before fit".into(),
            });
        }
        let take = if max_len == 0 { series.len() } else { series.len().min(max_len) };
        let mut data = Vec::with_capacity(take * 2);
        for e in &series.entries[..take] {
            data.push((signed_log(e.amount.as_f64()) - self.amount_mean) / self.amount_std);
            data.push(((e.delta_days as f64).ln_1p() - self.delta_mean) / self.delta_std);
        }
        Ok(Tensor::new(vec![take, 2], data)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scaler serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Integrity {
            name: "scaler".into(),
            reason: e.to_string(),
        })
    }
}

/// Model inputs for one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupFeatures {
    pub group_id: String,
    /// `L x 2`, at least one row.
    pub ts_sequence: Tensor,
    /// `T x dim` frozen word vectors; a single zero row for empty text.
    pub text_vectors: Tensor,
    /// Tokens behind `text_vectors` (empty for empty text).
    pub tokens: Vec<String>,
}

pub fn featurize(group: &TransactionGroup, model: &EmbeddingModel, scaler: &Scaler, max_series_len: usize) -> Result<GroupFeatures> {
    if group.series.is_empty() {
        return Err(Error::Data(format!("group {} has no transactions", group.group_id())));
    }
    let ts_sequence = scaler.transform(&group.series, max_series_len)?;
    let tokens: Vec<String> = group.normalized_text.tokens().to_vec();
    let dim = model.dim();
    let text_vectors = if tokens.is_empty() {
        Tensor::zeros(&[1, dim])
    } else {
        let mut data = Vec::with_capacity(tokens.len() * dim);
        for t in &tokens {
            data.extend(model.vector(t).into_iter().map(f64::from));
        }
        Tensor::new(vec![tokens.len(), dim], data)?
    };
    Ok(GroupFeatures {
        group_id: group.group_id(),
        ts_sequence,
        text_vectors,
        tokens,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub features: GroupFeatures,
    pub weak_target: f64,
    pub weak_probability: f64,
}

/// Drops all-abstain groups, rounds posteriors at the configured threshold,
/// undersamples the majority class to 1:1 and featurizes the survivors.
/// Output order is by group position in `groups`.
pub fn build_training_set(
    groups: &[TransactionGroup],
    weak_labels: &[(String, f64)],
    matrix: &LabelMatrix,
    model: &EmbeddingModel,
    scaler: &Scaler,
    config: &ClassifierConfig,
    seed: u64,
) -> Result<Vec<TrainingExample>> {
    let row_of: HashMap<&str, usize> = matrix.group_ids().iter().enumerate().map(|(i, g)| (g.as_str(), i)).collect();
    let label_of: HashMap<&str, f64> = weak_labels.iter().map(|(g, p)| (g.as_str(), *p)).collect();
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (i, g) in groups.iter().enumerate() {
        let id = g.group_id();
        let row = *row_of
            .get(id.as_str())
            .ok_or_else(|| Error::Data(format!("group {id} missing from label matrix")))?;
        let p = *label_of
            .get(id.as_str())
            .ok_or_else(|| Error::Data(format!("group {id} has no weak label")))?;
        if matrix.all_abstain(row) {
            continue;
        }
        if p >= config.rounding_threshold {
            positives.push((i, p));
        } else {
            negatives.push((i, p));
        }
    }
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::UnsatisfiableBalance {
            positives: positives.len(),
            negatives: negatives.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = positives.len().min(negatives.len());
    for class in [&mut positives, &mut negatives] {
        if class.len() > keep {
            class.shuffle(&mut rng);
            class.truncate(keep);
        }
    }
    let mut chosen: Vec<(usize, f64, f64)> = positives
        .into_iter()
        .map(|(i, p)| (i, p, 1.0))
        .chain(negatives.into_iter().map(|(i, p)| (i, p, 0.0)))
        .collect();
    chosen.sort_by_key(|c| c.0);
    chosen
        .into_iter()
        .map(|(i, p, y)| {
            Ok(TrainingExample {
                features: featurize(&groups[i], model, scaler, config.max_series_len)?,
                weak_target: y,
                weak_probability: p,
            })
        })
        .collect()
}
