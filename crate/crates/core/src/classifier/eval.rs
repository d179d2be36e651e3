use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub recall: f64,
    pub specificity: f64,
    pub balanced_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub balanced_accuracy: f64,
    pub recall: f64,
    pub specificity: f64,
    pub true_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    pub false_positives: usize,
    pub sweep: Vec<SweepRow>,
}

/// 0.00, 0.05, ..., 1.00.
pub fn default_sweep_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

struct Counts {
    tp: usize,
    fn_: usize,
    tn: usize,
    fp: usize,
}

fn confusion(scores: &[f64], gold: &[bool], threshold: f64) -> Counts {
    let mut c = Counts { tp: 0, fn_: 0, tn: 0, fp: 0 };
    for (&s, &y) in scores.iter().zip(gold) {
        match (y, s >= threshold) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fp += 1,
        }
    }
    c
}

/// `(TP/P + TN/N) / 2`.
pub fn balanced_accuracy(tp: usize, positives: usize, tn: usize, negatives: usize) -> f64 {
    (tp as f64 / positives as f64 + tn as f64 / negatives as f64) / 2.0
}

/// Scores at or above `threshold` count as positive.
pub fn evaluate(scores: &[f64], gold: &[bool], threshold: f64, grid: &[f64]) -> Result<EvalReport> {
    if scores.len() != gold.len() {
        return Err(Error::Data(format!("{} scores for {} gold labels", scores.len(), gold.len())));
    }
    let positives = gold.iter().filter(|&&y| y).count();
    let negatives = gold.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Data(format!(
            "evaluation needs both classes in the gold labels ({positives} positive, {negatives} negative)"
        )));
    }
    let row = |t: f64| {
        let c = confusion(scores, gold, t);
        SweepRow {
            threshold: t,
            recall: c.tp as f64 / positives as f64,
            specificity: c.tn as f64 / negatives as f64,
            balanced_accuracy: balanced_accuracy(c.tp, positives, c.tn, negatives),
        }
    };
    let c = confusion(scores, gold, threshold);
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    Ok(EvalReport {
        threshold,
        balanced_accuracy: balanced_accuracy(c.tp, positives, c.tn, negatives),
        recall: c.tp as f64 / positives as f64,
        specificity: c.tn as f64 / negatives as f64,
        true_positives: c.tp,
        false_negatives: c.fn_,
        true_negatives: c.tn,
        false_positives: c.fp,
        sweep: sorted.into_iter().map(row).collect(),
    })
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "threshold          {:.4}\nbalanced_accuracy  {:.4}\nrecall             {:.4}\nspecificity        {:.4}\n\
             tp {}  fn {}  tn {}  fp {}\n\n{:>9}  {:>8}  {:>11}  {:>17}\n",
            self.threshold,
            self.balanced_accuracy,
            self.recall,
            self.specificity,
            self.true_positives,
            self.false_negatives,
            self.true_negatives,
            self.false_positives,
            "threshold",
            "recall",
            "specificity",
            "balanced_accuracy"
        );
        for r in &self.sweep {
            out.push_str(&format!(
                "{:>9.2}  {:>8.4}  {:>11.4}  {:>17.4}\n",
                r.threshold, r.recall, r.specificity, r.balanced_accuracy
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fixed_confusion_counts() {
        let mut scores = Vec::new();
        let mut gold = Vec::new();
        for i in 0..100 {
            scores.push(if i < 90 { 0.95 } else { 0.1 });
            gold.push(true);
        }
        for i in 0..100 {
            scores.push(if i < 70 { 0.05 } else { 0.99 });
            gold.push(false);
        }
        let r = evaluate(&scores, &gold, 0.9, &default_sweep_grid()).unwrap();
        assert_eq!((r.true_positives, r.true_negatives), (90, 70));
        assert!((r.balanced_accuracy - 0.8).abs() < 1e-15);
        assert_eq!(r.recall, 0.9);
    }

    #[test]
    fn threshold_zero_recalls_everything() {
        let r = evaluate(&[0.0, 0.3, 0.9], &[true, false, true], 0.0, &[]).unwrap();
        assert_eq!(r.recall, 1.0);
    }

    #[test]
    fn single_class_is_an_error() {
        assert_eq!(evaluate(&[0.1, 0.2], &[true, true], 0.5, &[]).unwrap_err().exit_code(), 3);
        assert!(evaluate(&[0.1], &[true, false], 0.5, &[]).is_err());
    }

    #[test]
    fn random_scores_are_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let scores: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let gold: Vec<bool> = (0..10_000).map(|_| rng.random_bool(0.3)).collect();
        let r = evaluate(&scores, &gold, 0.5, &[]).unwrap();
        assert!((r.balanced_accuracy - 0.5).abs() < 0.05);
    }

    proptest! {
        #[test]
        fn sweep_is_monotone(data in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 2..200)) {
            let (scores, mut gold): (Vec<f64>, Vec<bool>) = data.into_iter().unzip();
            gold[0] = true;
            gold[1] = false;
            let r = evaluate(&scores, &gold, 0.9, &default_sweep_grid()).unwrap();
            for w in r.sweep.windows(2) {
                prop_assert!(w[1].recall <= w[0].recall);
                prop_assert!(w[1].specificity >= w[0].specificity);
            }
            prop_assert!((0.0..=1.0).contains(&r.balanced_accuracy));
        }
    }
}
