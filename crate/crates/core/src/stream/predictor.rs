use std::collections::BTreeMap;

use crate::classifier::{featurize, Classifier, Scaler};
use crate::embed::EmbeddingModel;
use crate::error::Result;
use crate::runstore::{self, LoadedRun};
use crate::txprep::{group, Transaction, TransactionGroup};

/// Everything needed to score groups, restored from one stored run. Offline
/// scoring and the streaming loop both go through this type.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub classifier: Classifier,
    pub embedding: EmbeddingModel,
    pub scaler: Scaler,
    pub model_type: String,
    pub model_version: String,
}

impl Predictor {
    pub fn from_loaded(loaded: &LoadedRun) -> Result<Self> {
        Ok(Self {
            classifier: loaded.get(runstore::CLASSIFIER)?,
            embedding: loaded.get(runstore::EMBEDDING)?,
            scaler: loaded.get(runstore::SCALER)?,
            model_type: format!("{}/dual-gru", loaded.record.task),
            model_version: format!("v{}/{}", loaded.version, loaded.record.run_id),
        })
    }

    pub fn score_groups(&self, groups: &[TransactionGroup]) -> Result<Vec<f64>> {
        let max_len = self.classifier.config().max_series_len;
        let features = groups
            .iter()
            .map(|g| featurize(g, &self.embedding, &self.scaler, max_len))
            .collect::<Result<Vec<_>>>()?;
        if features.is_empty() {
            return Ok(Vec::new());
        }
        self.classifier.predict(&features)
    }

    /// Groups `transactions` and gives every transaction its group's score.
    pub fn score_transactions(&self, transactions: &[Transaction]) -> Result<BTreeMap<String, f64>> {
        let groups = group(transactions);
        let scores = self.score_groups(&groups)?;
        let mut out = BTreeMap::new();
        for (g, s) in groups.iter().zip(scores) {
            for t in &g.members {
                out.insert(t.transaction_id.clone(), s);
            }
        }
        Ok(out)
    }
}
