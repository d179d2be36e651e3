//! Dual-branch classifier: a bidirectional GRU over the group's sparse
//! amount/gap series and another over its word vectors, concatenated into an
//! MLP with a sigmoid output. Also training-set construction, training with
//! early stopping, multi-run selection and evaluation.

mod eval;
mod features;
mod model;
mod select;
mod train;

pub use eval::{balanced_accuracy, evaluate, default_sweep_grid, EvalReport, SweepRow};
pub use features::{build_training_set, featurize, GroupFeatures, Scaler, TrainingExample};
pub use model::Classifier;
pub use select::{multi_run_select, RunOutcome, Selection};
pub use train::{train, EpochRecord, TrainOutput, ValidationSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adamw,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adamw,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub ts_hidden: usize,
    pub text_hidden: usize,
    pub gru_layers: usize,
    pub mlp_hidden: Vec<usize>,
    pub dropout: f64,
    pub optimizer: OptimizerConfig,
    pub max_epochs: usize,
    pub patience: usize,
    /// When false, all `max_epochs` run; the best epoch is still returned.
    pub early_stopping: bool,
    pub batch_size: usize,
    pub seed: u64,
    pub embedding_finetune: bool,
    pub rounding_threshold: f64,
    /// Keep only the most recent entries of each series (0 keeps all).
    pub max_series_len: usize,
    /// Threshold used for the per-epoch validation balanced accuracy.
    pub validation_threshold: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            ts_hidden: 32,
            text_hidden: 64,
            gru_layers: 1,
            mlp_hidden: vec![64, 32],
            dropout: 0.2,
            optimizer: OptimizerConfig::default(),
            max_epochs: 50,
            patience: 5,
            early_stopping: true,
            batch_size: 128,
            seed: 0,
            embedding_finetune: false,
            rounding_threshold: 0.5,
            max_series_len: 0,
            validation_threshold: 0.5,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("classifier: {m}")));
        if self.ts_hidden == 0 || self.text_hidden == 0 || self.gru_layers == 0 || self.batch_size == 0 {
            return bad("hidden sizes, gru_layers and batch_size must be positive");
        }
        if self.mlp_hidden.contains(&0) {
            return bad("mlp_hidden sizes must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.max_epochs == 0 || self.patience > self.max_epochs {
            return bad("need max_epochs >= 1 and patience <= max_epochs");
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.rounding_threshold) {
            return bad("rounding_threshold must lie in [0, 1]");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_checks() {
        assert!(ClassifierConfig::default().validate().is_ok());
        let c = ClassifierConfig { patience: 60, ..Default::default() };
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
        let c = ClassifierConfig { mlp_hidden: vec![0], ..Default::default() };
        assert!(c.validate().is_err());
        let parsed: ClassifierConfig = toml::from_str("ts_hidden = 8\n[optimizer]\nkind = \"sgd\"\n").unwrap();
        assert_eq!(parsed.ts_hidden, 8);
        assert_eq!(parsed.optimizer.kind, OptimizerKind::Sgd);
        assert_eq!(parsed.text_hidden, 64);
    }
}
