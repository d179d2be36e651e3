//! Task-file driven steps: split, embed, lf, labelmodel, train, predict,
//! eval. Intermediate files live in the task's workdir.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use serde::Serialize;
use txclass_core::classifier::{
    build_training_set, default_sweep_grid, evaluate, featurize, multi_run_select, train as train_classifier, Classifier, EvalReport, Scaler, ValidationSet,
};
use txclass_core::embed::{train_embedding_with_stats, EmbeddingModel};
use txclass_core::labelmodel::{fit_em, fit_moments, predict_labels, LabelModelParams};
use txclass_core::runstore::{self, RunStore};
use txclass_core::stream::Predictor;
use txclass_core::synthgen::{split, truth_labels, TruthRecord};
use txclass_core::txprep::{read_groups, read_jsonl_file, write_groups, write_jsonl, TransactionGroup};
use txclass_core::weaksup::{apply_lfs, lf_report, LabelMatrix, LfConfig, LfReport};
use txclass_core::{Error, Result};

use crate::task::{LabelMethod, TaskSpec};
use crate::{require, Context, GoldLabel, GroupScore, Report};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Fold {
    Train,
    Validation,
    Test,
}

impl Fold {
    pub const ALL: [Fold; 3] = [Fold::Train, Fold::Validation, Fold::Test];

    pub fn name(self) -> &'static str {
        match self {
            Fold::Train => "train",
            Fold::Validation => "validation",
            Fold::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Fold::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown fold {s:?}; expected train, validation or test")))
    }
}

/// Where each intermediate file of a task lives.
pub struct Paths<'a>(pub &'a TaskSpec);

impl Paths<'_> {
    pub fn groups(&self, fold: Fold) -> Result<PathBuf> {
        self.0.work_file(&format!("{}.groups.jsonl", fold.name()))
    }
    pub fn matrix(&self, fold: Fold) -> Result<PathBuf> {
        self.0.work_file(&format!("{}.matrix.jsonl", fold.name()))
    }
    pub fn weak(&self, fold: Fold) -> Result<PathBuf> {
        self.0.work_file(&format!("{}.weak.jsonl", fold.name()))
    }
    pub fn scores(&self, fold: Fold) -> Result<PathBuf> {
        self.0.work_file(&format!("{}.scores.jsonl", fold.name()))
    }
    pub fn embedding(&self) -> Result<PathBuf> {
        self.0.work_file("embedding.bin")
    }
    pub fn label_model(&self) -> Result<PathBuf> {
        self.0.work_file("label_model.json")
    }
}

fn load_fold(spec: &TaskSpec, fold: Fold) -> Result<Vec<TransactionGroup>> {
    let p = Paths(spec).groups(fold)?;
    require(&p, "split")?;
    read_groups(&p)
}

fn load_matrix(spec: &TaskSpec, fold: Fold) -> Result<LabelMatrix> {
    let p = Paths(spec).matrix(fold)?;
    require(&p, &format!("lf apply --fold {}", fold.name()))?;
    LabelMatrix::read_jsonl(&p)
}

fn load_weak(spec: &TaskSpec, fold: Fold) -> Result<Vec<(String, f64)>> {
    let p = Paths(spec).weak(fold)?;
    require(&p, &format!("labelmodel apply --fold {}", fold.name()))?;
    Ok(read_jsonl_file::<GroupScore>(&p)?.into_iter().map(|r| (r.group_id, r.probability)).collect())
}

fn load_embedding(spec: &TaskSpec) -> Result<EmbeddingModel> {
    let p = Paths(spec).embedding()?;
    require(&p, "embed train")?;
    EmbeddingModel::load(&p)
}

fn load_label_model(spec: &TaskSpec) -> Result<LabelModelParams> {
    let p = Paths(spec).label_model()?;
    require(&p, "labelmodel fit")?;
    LabelModelParams::load(&p)
}

/// Ground-truth labels of a fold, when the task names a truth file and a
/// category.
pub fn gold_labels(spec: &TaskSpec, groups: &[TransactionGroup]) -> Result<Option<Vec<bool>>> {
    match (&spec.data.truth, &spec.category) {
        (Some(truth), Some(category)) => {
            let records: Vec<TruthRecord> = read_jsonl_file(truth)?;
            Ok(Some(truth_labels(groups, &records, category)?))
        }
        _ => Ok(None),
    }
}

fn positives(labels: &[bool]) -> usize {
    labels.iter().filter(|&&y| y).count()
}

// ---------------------------------------------------------------- split

#[derive(Debug, Clone, Serialize)]
pub struct SplitReport {
    pub groups: [usize; 3],
    pub accounts: [usize; 3],
    pub files: Vec<PathBuf>,
}

impl Report for SplitReport {
    fn text(&self) -> String {
        let mut s = format!("{:<10}  {:>8}  {:>8}\n", "fold", "groups", "accounts");
        for (i, f) in Fold::ALL.iter().enumerate() {
            s.push_str(&format!("{:<10}  {:>8}  {:>8}\n", f.name(), self.groups[i], self.accounts[i]));
        }
        s
    }
}

pub fn split_task(spec: &TaskSpec) -> Result<SplitReport> {
    let groups = read_groups(&spec.data.groups)?;
    let folds = split(&groups, spec.split.fractions, spec.split.seed)?;
    let mut report = SplitReport {
        groups: [0; 3],
        accounts: [0; 3],
        files: Vec::new(),
    };
    for (i, (fold, part)) in Fold::ALL.into_iter().zip([&folds.train, &folds.validation, &folds.test]).enumerate() {
        let p = Paths(spec).groups(fold)?;
        write_groups(&p, part)?;
        report.groups[i] = part.len();
        let mut accts: Vec<&str> = part.iter().map(|g| g.account_id.as_str()).collect();
        accts.sort_unstable();
        accts.dedup();
        report.accounts[i] = accts.len();
        report.files.push(p);
    }
    Ok(report)
}

// ---------------------------------------------------------------- embed

#[derive(Debug, Clone, Serialize)]
pub struct EmbedReport {
    pub sentences: usize,
    pub vocabulary: usize,
    pub dim: usize,
    pub epoch_losses: Vec<f64>,
    pub path: PathBuf,
}

impl Report for EmbedReport {
    fn text(&self) -> String {
        let losses: Vec<String> = self.epoch_losses.iter().map(|l| format!("{l:.4}")).collect();
        format!(
            "sentences   {}\nvocabulary  {}\ndim         {}\nloss        {}\nwritten     {}\n",
            self.sentences,
            self.vocabulary,
            self.dim,
            losses.join(" "),
            self.path.display()
        )
    }
}

/// Trains on the training fold only: one sentence per transaction.
pub fn embed_train(ctx: &Context, spec: &TaskSpec) -> Result<EmbedReport> {
    let groups = load_fold(spec, Fold::Train)?;
    let corpus: Vec<_> = groups
        .iter()
        .filter(|g| !g.normalized_text.is_empty())
        .flat_map(|g| std::iter::repeat_n(g.normalized_text.clone(), g.members.len()))
        .collect();
    let mut cfg = spec.embedding.clone();
    if ctx.deterministic {
        cfg.workers = 1;
    }
    let (model, stats) = train_embedding_with_stats(&corpus, &cfg)?;
    let path = Paths(spec).embedding()?;
    model.save(&path)?;
    Ok(EmbedReport {
        sentences: corpus.len(),
        vocabulary: model.vocabulary().len(),
        dim: model.dim(),
        epoch_losses: stats.epoch_losses,
        path,
    })
}

// ---------------------------------------------------------------- lf

#[derive(Debug, Clone, Serialize)]
pub struct LfRun {
    pub fold: Fold,
    pub all_abstain: usize,
    pub report: LfReport,
    pub path: Option<PathBuf>,
}

impl Report for LfRun {
    fn text(&self) -> String {
        let mut s = format!(
            "fold {}: {} rows, {} with no vote\n\n{}",
            self.fold.name(),
            self.report.n_rows,
            self.all_abstain,
            self.report.to_table()
        );
        if let Some(p) = &self.path {
            s.push_str(&format!("\nwritten {}\n", p.display()));
        }
        s
    }
}

fn apply_task_lfs(spec: &TaskSpec, groups: &[TransactionGroup]) -> Result<LabelMatrix> {
    let config = LfConfig::load(&spec.lf_config)?;
    let emb_path = Paths(spec).embedding()?;
    let emb = if emb_path.exists() { Some(EmbeddingModel::load(&emb_path)?) } else { None };
    apply_lfs(groups, &config, emb.as_ref())
}

pub fn lf_apply(spec: &TaskSpec, fold: Fold) -> Result<LfRun> {
    let groups = load_fold(spec, fold)?;
    let matrix = apply_task_lfs(spec, &groups)?;
    let path = Paths(spec).matrix(fold)?;
    matrix.write_jsonl(&path)?;
    Ok(LfRun {
        fold,
        all_abstain: (0..matrix.n_rows()).filter(|&i| matrix.all_abstain(i)).count(),
        report: lf_report(&matrix, None)?,
        path: Some(path),
    })
}

/// Coverage, overlap and conflict of the stored matrix, with accuracies when
/// ground truth is available.
pub fn lf_report_task(spec: &TaskSpec, fold: Fold) -> Result<LfRun> {
    let groups = load_fold(spec, fold)?;
    let matrix = load_matrix(spec, fold)?;
    let gold = gold_labels(spec, &groups)?;
    let dev: Option<Vec<Option<bool>>> = gold.map(|g| g.into_iter().map(Some).collect());
    Ok(LfRun {
        fold,
        all_abstain: (0..matrix.n_rows()).filter(|&i| matrix.all_abstain(i)).count(),
        report: lf_report(&matrix, dev.as_deref())?,
        path: None,
    })
}

// ---------------------------------------------------------------- labelmodel

#[derive(Debug, Clone, Serialize)]
pub struct LabelModelReport {
    pub params: LabelModelParams,
    pub path: PathBuf,
}

impl Report for LabelModelReport {
    fn text(&self) -> String {
        let mut s = format!("method {:?}, class balance {:.4}\n\n", self.params.method, self.params.class_balance);
        s.push_str(&format!("{:<24}  {:>8}  {:>8}\n", "lf", "accuracy", "coverage"));
        for (i, n) in self.params.lf_names.iter().enumerate() {
            s.push_str(&format!("{:<24}  {:>8.4}  {:>8.4}\n", n, self.params.accuracies[i], self.params.coverages[i]));
        }
        s.push_str(&format!("\nwritten {}\n", self.path.display()));
        s
    }
}

pub fn labelmodel_fit(spec: &TaskSpec) -> Result<LabelModelReport> {
    let matrix = load_matrix(spec, Fold::Train)?;
    let cfg = &spec.label_model.config;
    let params = match spec.label_model.method {
        LabelMethod::Moments => fit_moments(&matrix, spec.class_balance, cfg)?,
        LabelMethod::Em => fit_em(&matrix, spec.class_balance, cfg)?,
    };
    let path = Paths(spec).label_model()?;
    params.save(&path)?;
    Ok(LabelModelReport { params, path })
}

#[derive(Debug, Clone, Serialize)]
pub struct WeakLabelReport {
    pub fold: Fold,
    pub rows: usize,
    pub all_abstain: usize,
    /// Rows at or above the rounding threshold.
    pub positive: usize,
    pub mean_probability: f64,
    pub path: PathBuf,
}

impl Report for WeakLabelReport {
    fn text(&self) -> String {
        format!(
            "fold {}: {} rows, {} with no vote, {} rounded positive, mean probability {:.4}\nwritten {}\n",
            self.fold.name(),
            self.rows,
            self.all_abstain,
            self.positive,
            self.mean_probability,
            self.path.display()
        )
    }
}

pub fn labelmodel_apply(spec: &TaskSpec, fold: Fold) -> Result<WeakLabelReport> {
    let matrix = load_matrix(spec, fold)?;
    let params = load_label_model(spec)?;
    let labels = predict_labels(&params, &matrix)?;
    let rows: Vec<GroupScore> = labels
        .iter()
        .map(|(g, p)| GroupScore {
            group_id: g.clone(),
            probability: *p,
        })
        .collect();
    let path = Paths(spec).weak(fold)?;
    write_jsonl(&path, &rows)?;
    let threshold = spec.classifier.rounding_threshold;
    Ok(WeakLabelReport {
        fold,
        rows: rows.len(),
        all_abstain: (0..matrix.n_rows()).filter(|&i| matrix.all_abstain(i)).count(),
        positive: rows.iter().filter(|r| r.probability >= threshold).count(),
        mean_probability: rows.iter().map(|r| r.probability).sum::<f64>() / rows.len().max(1) as f64,
        path,
    })
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Serialize)]
pub struct Candidate {
    pub seed: u64,
    pub val_balanced_accuracy: f64,
    pub best_epoch: usize,
    pub epochs: usize,
    pub run_id: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub task: String,
    pub training_examples: usize,
    pub validation_source: String,
    /// Successful candidates, best first.
    pub candidates: Vec<Candidate>,
    pub failed: Vec<(u64, String)>,
    pub rank: usize,
    pub selected: Candidate,
    pub run_id: String,
    pub became_best: bool,
}

impl Report for TrainReport {
    fn text(&self) -> String {
        let mut s = format!(
            "{} training examples, validation labels from {}\n\n{:>4}  {:>6}  {:>8}  {:>6}  run\n",
            self.training_examples, self.validation_source, "rank", "seed", "val_ba", "epoch"
        );
        for (i, c) in self.candidates.iter().enumerate() {
            let mark = if i + 1 == self.rank { "*" } else { " " };
            s.push_str(&format!(
                "{:>3}{mark}  {:>6}  {:>8.4}  {:>6}  {}\n",
                i + 1,
                c.seed,
                c.val_balanced_accuracy,
                format!("{}/{}", c.best_epoch, c.epochs),
                c.run_id
            ));
        }
        for (seed, e) in &self.failed {
            s.push_str(&format!("failed seed {seed}: {e}\n"));
        }
        s.push_str(&format!(
            "\nselected seed {} (rank {}) as run {}{}\n",
            self.selected.seed,
            self.rank,
            self.run_id,
            if self.became_best { ", new best" } else { "" }
        ));
        s
    }
}

/// Name under which individual candidate runs are recorded.
pub fn candidate_task(task: &str) -> String {
    format!("{task}.candidates")
}

/// Trains `runs` seeds, logs every candidate, and registers the run at
/// `rank` under the task with all artifacts needed for inference.
pub fn train(ctx: &Context, spec: &TaskSpec, runs: Option<usize>, rank: Option<usize>) -> Result<TrainReport> {
    let runs = runs.unwrap_or(spec.selection.runs);
    let rank = rank.unwrap_or(spec.selection.rank);
    let store = ctx.open_store(Some(spec))?;
    let groups = load_fold(spec, Fold::Train)?;
    let matrix = load_matrix(spec, Fold::Train)?;
    let weak = load_weak(spec, Fold::Train)?;
    let emb = load_embedding(spec)?;
    let label_model = load_label_model(spec)?;
    let lf_config = LfConfig::load(&spec.lf_config)?;
    let cfg = &spec.classifier;
    let scaler = Scaler::fit(&groups);
    let examples = build_training_set(&groups, &weak, &matrix, &emb, &scaler, cfg, spec.selection.undersample_seed)?;

    let val_groups = load_fold(spec, Fold::Validation)?;
    let (labels, source) = match gold_labels(spec, &val_groups)? {
        Some(g) => (g, "ground truth"),
        None => {
            log::warn!("no ground truth for {}; selecting on held-out weak labels", spec.task);
            let w = load_weak(spec, Fold::Validation)?;
            (w.iter().map(|(_, p)| *p >= cfg.rounding_threshold).collect(), "weak labels")
        }
    };
    let p = positives(&labels);
    if p == 0 || p == labels.len() {
        return Err(Error::Data(format!("validation labels need both classes ({p} of {} positive)", labels.len())));
    }
    let val = ValidationSet {
        features: val_groups
            .iter()
            .map(|g| featurize(g, &emb, &scaler, cfg.max_series_len))
            .collect::<Result<_>>()?,
        labels,
    };
    let vocab = emb.vocabulary().to_vec();
    let finetune = cfg.embedding_finetune.then_some((&emb, vocab.as_slice()));
    let cand_task = candidate_task(&spec.task);

    let sel = multi_run_select(runs, rank, spec.selection.base_seed, !ctx.deterministic, |seed| {
        let mut run = store.start_run(&cand_task, &spec.source, &ctx.code_version)?;
        let c = txclass_core::classifier::ClassifierConfig { seed, ..cfg.clone() };
        let trained = Classifier::new(&c, emb.dim(), finetune).and_then(|init| train_classifier(&examples, &val, &c, init));
        let out = match trained {
            Ok(o) => o,
            Err(e) => {
                store.fail_run(&mut run, &e.to_string())?;
                return Err(e);
            }
        };
        store.log_artifact(&mut run, runstore::CLASSIFIER, &out.model)?;
        let metrics = BTreeMap::from([
            ("val_balanced_accuracy".to_string(), out.best_val_balanced_accuracy),
            ("best_epoch".to_string(), out.best_epoch as f64),
            ("seed".to_string(), seed as f64),
        ]);
        store.finish_run(&mut run, metrics, "val_balanced_accuracy")?;
        let cand = Candidate {
            seed,
            val_balanced_accuracy: out.best_val_balanced_accuracy,
            best_epoch: out.best_epoch,
            epochs: out.history.len(),
            run_id: run.run_id.clone(),
        };
        Ok((out.best_val_balanced_accuracy, (out.model, cand)))
    })?;

    let (model, chosen) = &sel.chosen().payload;
    let mut run = store.start_run(&spec.task, &spec.source, &ctx.code_version)?;
    store.log_artifact(&mut run, runstore::LF_CONFIG, &lf_config)?;
    store.log_artifact(&mut run, runstore::EMBEDDING, &emb)?;
    store.log_artifact(&mut run, runstore::SCALER, &scaler)?;
    store.log_artifact(&mut run, runstore::LABEL_MODEL, &label_model)?;
    store.log_artifact(&mut run, runstore::CLASSIFIER, model)?;
    let metrics = BTreeMap::from([
        ("val_balanced_accuracy".to_string(), chosen.val_balanced_accuracy),
        ("seed".to_string(), chosen.seed as f64),
        ("rank".to_string(), rank as f64),
        ("runs".to_string(), runs as f64),
        ("training_examples".to_string(), examples.len() as f64),
    ]);
    let became_best = store.finish_run(&mut run, metrics, "val_balanced_accuracy")?;
    Ok(TrainReport {
        task: spec.task.clone(),
        training_examples: examples.len(),
        validation_source: source.to_string(),
        candidates: sel.ranked.iter().map(|r| r.payload.1.clone()).collect(),
        failed: sel.failed.clone(),
        rank,
        selected: chosen.clone(),
        run_id: run.run_id,
        became_best,
    })
}

// ---------------------------------------------------------------- predict

#[derive(Debug, Clone, Serialize)]
pub struct PredictReport {
    pub model_type: String,
    pub model_version: String,
    pub rows: usize,
    pub path: PathBuf,
}

impl Report for PredictReport {
    fn text(&self) -> String {
        format!(
            "{} ({}) scored {} groups\nwritten {}\n",
            self.model_type,
            self.model_version,
            self.rows,
            self.path.display()
        )
    }
}

/// The task's best run, parity-checked against the running code.
pub fn load_predictor(ctx: &Context, store: &RunStore, task: &str, allow_mismatch: bool) -> Result<Predictor> {
    let loaded = store.load_for_inference(task, &ctx.code_version, allow_mismatch)?;
    Predictor::from_loaded(&loaded)
}

/// Scores `groups` (a fold of the task by default) with the best run.
pub fn predict(
    ctx: &Context,
    spec: &TaskSpec,
    fold: Fold,
    input: Option<PathBuf>,
    output: Option<PathBuf>,
    allow_mismatch: bool,
) -> Result<PredictReport> {
    let store = ctx.open_store(Some(spec))?;
    let predictor = load_predictor(ctx, &store, &spec.task, allow_mismatch)?;
    let groups = match &input {
        Some(p) => read_groups(p)?,
        None => load_fold(spec, fold)?,
    };
    let scores = predictor.score_groups(&groups)?;
    let rows: Vec<GroupScore> = groups
        .iter()
        .zip(scores)
        .map(|(g, s)| GroupScore {
            group_id: g.group_id(),
            probability: s,
        })
        .collect();
    let path = match output {
        Some(p) => p,
        None => Paths(spec).scores(fold)?,
    };
    write_jsonl(&path, &rows)?;
    Ok(PredictReport {
        model_type: predictor.model_type,
        model_version: predictor.model_version,
        rows: rows.len(),
        path,
    })
}

// ---------------------------------------------------------------- eval

impl Report for EvalReport {
    fn text(&self) -> String {
        self.to_table()
    }
}

impl Report for LfReport {
    fn text(&self) -> String {
        self.to_table()
    }
}

/// Joins scores to gold labels by group id. Every scored group needs a label.
pub fn join_gold(scores: &[GroupScore], gold: &[GoldLabel]) -> Result<(Vec<f64>, Vec<bool>)> {
    let by_id: HashMap<&str, bool> = gold.iter().map(|g| (g.group_id.as_str(), g.label)).collect();
    let mut s = Vec::with_capacity(scores.len());
    let mut y = Vec::with_capacity(scores.len());
    for r in scores {
        let label = by_id
            .get(r.group_id.as_str())
            .ok_or_else(|| Error::Data(format!("no gold label for group {}", r.group_id)))?;
        s.push(r.probability);
        y.push(*label);
    }
    Ok((s, y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreSource {
    /// The stored `predict` output of the fold.
    Model,
    /// The label-model posteriors of the fold.
    LabelModel,
}

/// Evaluates a fold of the task against its ground truth.
pub fn eval_task(spec: &TaskSpec, fold: Fold, source: ScoreSource, threshold: f64) -> Result<EvalReport> {
    let groups = load_fold(spec, fold)?;
    let gold = gold_labels(spec, &groups)?
        .ok_or_else(|| Error::Config("evaluation needs [data] truth and category in the task file".into()))?;
    let gold: Vec<GoldLabel> = groups
        .iter()
        .zip(gold)
        .map(|(g, label)| GoldLabel {
            group_id: g.group_id(),
            label,
        })
        .collect();
    let scores: Vec<GroupScore> = match source {
        ScoreSource::Model => {
            let p = Paths(spec).scores(fold)?;
            require(&p, &format!("predict --fold {}", fold.name()))?;
            read_jsonl_file(&p)?
        }
        ScoreSource::LabelModel => load_weak(spec, fold)?
            .into_iter()
            .map(|(group_id, probability)| GroupScore { group_id, probability })
            .collect(),
    };
    let (s, y) = join_gold(&scores, &gold)?;
    evaluate(&s, &y, threshold, &default_sweep_grid())
}

/// Evaluates a scores file against a gold file.
pub fn eval_files(scores: &std::path::Path, gold: &std::path::Path, threshold: f64) -> Result<EvalReport> {
    let scores: Vec<GroupScore> = read_jsonl_file(scores)?;
    let gold: Vec<GoldLabel> = read_jsonl_file(gold)?;
    let (s, y) = join_gold(&scores, &gold)?;
    evaluate(&s, &y, threshold, &default_sweep_grid())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn join_requires_every_label() {
        let scores = vec![
            GroupScore {
                group_id: "a".into(),
                probability: 0.9,
            },
            GroupScore {
                group_id: "b".into(),
                probability: 0.1,
            },
        ];
        let gold = vec![
            GoldLabel {
                group_id: "b".into(),
                label: false,
            },
            GoldLabel {
                group_id: "a".into(),
                label: true,
            },
        ];
        assert_eq!(join_gold(&scores, &gold).unwrap(), (vec![0.9, 0.1], vec![true, false]));
        assert_eq!(join_gold(&scores, &gold[..1]).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn fold_names_round_trip() {
        for f in Fold::ALL {
            assert_eq!(Fold::parse(f.name()).unwrap(), f);
        }
        assert_eq!(Fold::parse("dev").unwrap_err().exit_code(), 2);
    }
}
