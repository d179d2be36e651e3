use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use txclass_nn::{bce_term, AdamW, Graph, Optimizer, Sgd};

use crate::error::{Error, Result};

use super::eval::balanced_accuracy;
use super::features::{GroupFeatures, TrainingExample};
use super::model::Classifier;
use super::{ClassifierConfig, OptimizerKind};

/// Held-out groups with the labels used for model selection.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    pub features: Vec<GroupFeatures>,
    pub labels: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_balanced_accuracy: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Snapshot from the best validation epoch.
    pub model: Classifier,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch of the returned snapshot.
    pub best_epoch: usize,
    pub best_val_balanced_accuracy: f64,
}

/// Balanced accuracy and mean log loss on the validation labels.
fn val_score(model: &Classifier, val: &ValidationSet, threshold: f64) -> Result<(f64, f64)> {
    let scores = model.predict(&val.features)?;
    let (mut tp, mut tn, mut p, mut n) = (0, 0, 0, 0);
    let mut loss = 0.0;
    for (&s, &y) in scores.iter().zip(&val.labels) {
        loss += bce_term(s, if y { 1.0 } else { 0.0 });
        if y {
            p += 1;
            tp += usize::from(s >= threshold);
        } else {
            n += 1;
            tn += usize::from(s < threshold);
        }
    }
    Ok((balanced_accuracy(tp, p, tn, n), loss / scores.len() as f64))
}

/// Minibatch BCE on the weak targets with per-epoch validation, keeping the
/// best snapshot: highest balanced accuracy, ties broken by lower validation
/// log loss. Stops once `patience` epochs pass without an improvement (when
/// early stopping is on).
pub fn train(
    examples: &[TrainingExample],
    validation: &ValidationSet,
    config: &ClassifierConfig,
    mut model: Classifier,
) -> Result<TrainOutput> {
    config.validate()?;
    if examples.is_empty() || validation.features.is_empty() {
        return Err(Error::Data("training and validation sets must be non-empty".into()));
    }
    if validation.features.len() != validation.labels.len() {
        return Err(Error::Data("validation features and labels differ in length".into()));
    }
    if !validation.labels.contains(&true) || !validation.labels.contains(&false) {
        return Err(Error::Data("validation labels must contain both classes".into()));
    }
    let o = &config.optimizer;
    let mut optimizer: Box<dyn Optimizer> = match o.kind {
        OptimizerKind::Adamw => Box::new(AdamW::new(o.learning_rate, o.beta1, o.beta2, o.eps, o.weight_decay)),
        OptimizerKind::Sgd => Box::new(Sgd::new(o.learning_rate, o.momentum)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_7a1e);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, f64, usize, Classifier)> = None;
    let mut since_best = 0usize;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let feats: Vec<&GroupFeatures> = batch.iter().map(|&i| &examples[i].features).collect();
            let targets: Vec<f64> = batch.iter().map(|&i| examples[i].weak_target).collect();
            let grads = {
                let mut g = Graph::new(model.params());
                let p = model.forward(&mut g, &feats, Some(&mut rng))?;
                let loss = g.bce(p, &targets)?;
                let value = g.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::Divergence { epoch, loss: value });
                }
                loss_sum += value * batch.len() as f64;
                seen += batch.len();
                g.backward(loss)?
            };
            if !grads.all_finite() {
                return Err(Error::Divergence { epoch, loss: f64::NAN });
            }
            optimizer.step(model.params_mut(), &grads);
        }
        if !model.params().all_finite() {
            return Err(Error::Divergence { epoch, loss: f64::NAN });
        }
        let (val_ba, val_loss) = val_score(&model, validation, config.validation_threshold)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_balanced_accuracy: val_ba,
            val_loss,
        });
        log::debug!("epoch {epoch}: loss {:.5} val_ba {val_ba:.4}", loss_sum / seen as f64);
        let improved = best
            .as_ref()
            .is_none_or(|(b, l, _, _)| val_ba > *b || (val_ba == *b && val_loss < *l));
        if improved {
            best = Some((val_ba, val_loss, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if config.early_stopping && since_best >= config.patience {
            break;
        }
    }
    let (best_val_balanced_accuracy, _, best_epoch, model) = best.expect("at least one epoch ran");
    Ok(TrainOutput {
        model,
        history,
        best_epoch,
        best_val_balanced_accuracy,
    })
}
