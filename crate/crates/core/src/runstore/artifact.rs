use serde::{Deserialize, Serialize};

use crate::classifier::{Classifier, Scaler};
use crate::embed::EmbeddingModel;
use crate::error::{Error, Result};
use crate::labelmodel::LabelModelParams;
use crate::weaksup::LfConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Scaler,
    Embedding,
    LabelModel,
    Classifier,
    LfConfig,
}

/// Fitted state that can be stored in a run and restored bit for bit.
pub trait Artifact: Sized {
    const KIND: ArtifactKind;
    fn to_artifact_bytes(&self) -> Result<Vec<u8>>;
    fn from_artifact_bytes(bytes: &[u8]) -> Result<Self>;
}

fn corrupt(kind: &str, reason: impl ToString) -> Error {
    Error::Integrity {
        name: kind.into(),
        reason: reason.to_string(),
    }
}

impl Artifact for Scaler {
    const KIND: ArtifactKind = ArtifactKind::Scaler;

    fn to_artifact_bytes(&self) -> Result<Vec<u8>> {
        if !self.fitted {
            return Err(corrupt("scaler", "refusing to store an unfitted scaler"));
        }
        Ok(self.to_json().into_bytes())
    }

    fn from_artifact_bytes(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| corrupt("scaler", e))?;
        let s = Scaler::from_json(text)?;
        if !s.fitted {
            return Err(corrupt("scaler", "stored scaler is not fitted"));
        }
        Ok(s)
    }
}

impl Artifact for EmbeddingModel {
    const KIND: ArtifactKind = ArtifactKind::Embedding;

    fn to_artifact_bytes(&self) -> Result<Vec<u8>> {
        Ok(self.to_bytes())
    }

    fn from_artifact_bytes(bytes: &[u8]) -> Result<Self> {
        EmbeddingModel::from_bytes(bytes)
    }
}

impl Artifact for Classifier {
    const KIND: ArtifactKind = ArtifactKind::Classifier;

    fn to_artifact_bytes(&self) -> Result<Vec<u8>> {
        Ok(self.to_bytes())
    }

    fn from_artifact_bytes(bytes: &[u8]) -> Result<Self> {
        Classifier::from_bytes(bytes)
    }
}

impl Artifact for LabelModelParams {
    const KIND: ArtifactKind = ArtifactKind::LabelModel;

    fn to_artifact_bytes(&self) -> Result<Vec<u8>> {
        serde_json::to_vec_pretty(self).map_err(|e| corrupt("label_model", e))
    }

    fn from_artifact_bytes(bytes: &[u8]) -> Result<Self> {
        let p: LabelModelParams = serde_json::from_slice(bytes).map_err(|e| corrupt("label_model", e))?;
        p.validate()?;
        Ok(p)
    }
}

impl Artifact for LfConfig {
    const KIND: ArtifactKind = ArtifactKind::LfConfig;

    fn to_artifact_bytes(&self) -> Result<Vec<u8>> {
        Ok(self.to_toml().into_bytes())
    }

    fn from_artifact_bytes(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| corrupt("lf_config", e))?;
        LfConfig::from_toml(text)
    }
}
