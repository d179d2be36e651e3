//! End-to-end run on a synthetic corpus: label model versus the selected
//! network on the test fold.
//!
//! `cargo run --example benchmark -- configs/corpus.toml configs/rent_lfs.toml rent 8 2`

use std::path::Path;
use std::time::Instant;

use txclass_core::classifier::{
    build_training_set, evaluate, featurize, multi_run_select, train, Classifier, ClassifierConfig, OptimizerConfig, Scaler, ValidationSet,
};
use txclass_core::embed::{train_embedding, EmbeddingConfig};
use txclass_core::labelmodel::{fit_moments, predict_labels, LabelModelConfig};
use txclass_core::synthgen::{generate, split, truth_labels, SynthConfig};
use txclass_core::txprep::{group, normalize};
use txclass_core::weaksup::{apply_lfs, lf_report, LfConfig};

fn main() -> txclass_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let corpus_path = args.get(1).map(String::as_str).unwrap_or("configs/corpus.toml");
    let lf_path = args.get(2).map(String::as_str).unwrap_or("configs/rent_lfs.toml");
    let category = args.get(3).map(String::as_str).unwrap_or("rent");
    let runs: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(8);
    let rank: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(2);
    let t0 = Instant::now();

    let synth = SynthConfig::load(Path::new(corpus_path))?;
    let (txs, truth) = generate(&synth)?;
    let groups = group(&txs);
    let folds = split(&groups, [0.7, 0.15, 0.15], 11)?;
    let gold_train = truth_labels(&folds.train, &truth, category)?;
    let class_balance = gold_train.iter().filter(|&&y| y).count() as f64 / gold_train.len() as f64;
    println!(
        "{} transactions, {} groups ({} / {} / {}), prior {class_balance:.4}  [{:.1}s]",
        txs.len(),
        groups.len(),
        folds.train.len(),
        folds.validation.len(),
        folds.test.len(),
        t0.elapsed().as_secs_f64()
    );

    let train_accounts: std::collections::HashSet<&str> = folds.train.iter().map(|g| g.account_id.as_str()).collect();
    let corpus: Vec<_> = txs
        .iter()
        .filter(|t| train_accounts.contains(t.account_id.as_str()))
        .map(|t| normalize(&t.description, t.merchant_name.as_deref()))
        .filter(|t| !t.is_empty())
        .collect();
    let emb_cfg = EmbeddingConfig {
        dim: 32,
        min_count: 3,
        epochs: 3,
        bucket_count: 200_000,
        workers: 4,
        ..Default::default()
    };
    let emb = train_embedding(&corpus, &emb_cfg)?;
    println!("embedding: {} words  [{:.1}s]", emb.vocabulary().len(), t0.elapsed().as_secs_f64());

    let lfs = LfConfig::load(Path::new(lf_path))?;
    let m_train = apply_lfs(&folds.train, &lfs, Some(&emb))?;
    let m_test = apply_lfs(&folds.test, &lfs, Some(&emb))?;
    let dev: Vec<Option<bool>> = gold_train.iter().map(|&y| Some(y)).collect();
    println!("{}", lf_report(&m_train, Some(&dev))?.to_table());
    let lm = fit_moments(&m_train, class_balance, &LabelModelConfig::default())?;
    println!("accuracies {:?}", lm.accuracies);
    let weak = predict_labels(&lm, &m_train)?;
    let lm_test: Vec<f64> = predict_labels(&lm, &m_test)?.into_iter().map(|(_, p)| p).collect();
    let gold_test = truth_labels(&folds.test, &truth, category)?;
    let lm_report = evaluate(&lm_test, &gold_test, 0.5, &[])?;
    println!(
        "label model test BA {:.4} (recall {:.4}, spec {:.4})  [{:.1}s]",
        lm_report.balanced_accuracy,
        lm_report.recall,
        lm_report.specificity,
        t0.elapsed().as_secs_f64()
    );

    let cfg = ClassifierConfig {
        ts_hidden: 8,
        text_hidden: 8,
        mlp_hidden: vec![16],
        dropout: 0.1,
        max_epochs: 30,
        patience: 6,
        batch_size: 64,
        max_series_len: 16,
        optimizer: OptimizerConfig {
            learning_rate: 0.01,
            ..Default::default()
        },
        ..Default::default()
    };
    let scaler = Scaler::fit(&folds.train);
    let examples = build_training_set(&folds.train, &weak, &m_train, &emb, &scaler, &cfg, 0)?;
    let gold_val = truth_labels(&folds.validation, &truth, category)?;
    let val = ValidationSet {
        features: folds
            .validation
            .iter()
            .map(|g| featurize(g, &emb, &scaler, cfg.max_series_len))
            .collect::<txclass_core::Result<_>>()?,
        labels: gold_val,
    };
    let test_features: Vec<_> = folds
        .test
        .iter()
        .map(|g| featurize(g, &emb, &scaler, cfg.max_series_len))
        .collect::<txclass_core::Result<_>>()?;
    println!("{} training examples  [{:.1}s]", examples.len(), t0.elapsed().as_secs_f64());

    let sel = multi_run_select(runs, rank, 100, true, |seed| {
        let c = ClassifierConfig { seed, ..cfg.clone() };
        let out = train(&examples, &val, &c, Classifier::new(&c, emb.dim(), None)?)?;
        println!("  seed {seed}: best epoch {} of {}, val BA {:.4}", out.best_epoch, out.history.len(), out.best_val_balanced_accuracy);
        Ok((out.best_val_balanced_accuracy, out.model))
    })?;
    let scores = sel.chosen().payload.predict(&test_features)?;
    let r = evaluate(&scores, &gold_test, 0.5, &[])?;
    println!(
        "network (seed {}) test BA {:.4} (recall {:.4}, spec {:.4}); label model {:.4}  [{:.1}s]",
        sel.chosen().seed,
        r.balanced_accuracy,
        r.recall,
        r.specificity,
        lm_report.balanced_accuracy,
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}
