use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use txclass_core::classifier::ClassifierConfig;
use txclass_core::embed::EmbeddingConfig;
use txclass_core::labelmodel::LabelModelConfig;
use txclass_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LabelMethod {
    #[default]
    Moments,
    Em,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct LabelModelSection {
    pub method: LabelMethod,
    #[serde(flatten)]
    pub config: LabelModelConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Grouped transactions (output of `prep`).
    pub groups: PathBuf,
    /// Ground-truth records; enables gold validation labels and `lf report`
    /// accuracies.
    #[serde(default)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            fractions: [0.7, 0.15, 0.15],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSection {
    pub runs: usize,
    pub rank: usize,
    pub base_seed: u64,
    /// Seed of the 1:1 undersampling draw.
    pub undersample_seed: u64,
}

impl Default for SelectionSection {
    fn default() -> Self {
        Self {
            runs: 50,
            rank: 10,
            base_seed: 0,
            undersample_seed: 0,
        }
    }
}

/// One binary classification task. Relative paths are resolved against the
/// directory of the task file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub task: String,
    /// Ground-truth category that counts as positive.
    #[serde(default)]
    pub category: Option<String>,
    pub class_balance: f64,
    pub lf_config: PathBuf,
    /// Intermediate files of this task.
    pub workdir: PathBuf,
    #[serde(default)]
    pub store: Option<PathBuf>,
    pub data: DataSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub label_model: LabelModelSection,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub selection: SelectionSection,
    /// Raw text of the task file, stored with every run.
    #[serde(skip)]
    pub source: String,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl TaskSpec {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut spec: TaskSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.source = text.to_string();
        spec.lf_config = resolve(base, &spec.lf_config);
        spec.workdir = resolve(base, &spec.workdir);
        spec.store = spec.store.map(|s| resolve(base, &s));
        spec.data.groups = resolve(base, &spec.data.groups);
        spec.data.truth = spec.data.truth.map(|t| resolve(base, &t));
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.task.is_empty() || !self.task.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(Error::Config(format!("task name {:?} must be ASCII letters, digits, '_' or '-'", self.task)));
        }
        if !(self.class_balance > 0.0 && self.class_balance < 1.0) {
            return Err(Error::Config(format!("class_balance {} must lie in (0, 1)", self.class_balance)));
        }
        let s = &self.selection;
        if s.rank == 0 || s.rank > s.runs {
            return Err(Error::Config(format!("selection needs 1 <= rank <= runs, got rank {} of {}", s.rank, s.runs)));
        }
        self.embedding.validate()?;
        self.classifier.validate()?;
        Ok(())
    }

    /// `workdir/<name>`, creating the directory.
    pub fn work_file(&self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.workdir).map_err(|e| Error::io(&self.workdir, e))?;
        Ok(self.workdir.join(name))
    }
}
