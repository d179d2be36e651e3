//! Conditionally independent generative model over labeling-function votes.
//!
//! Each function `j` votes (non-abstains) with probability `beta_j` and, when
//! it votes, agrees with the true class with probability `alpha_j`,
//! symmetrically for both classes. Abstentions carry no evidence.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weaksup::{LabelMatrix, Vote};

pub const ACCURACY_MIN: f64 = 0.01;
pub const ACCURACY_MAX: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelModelParams {
    pub lf_names: Vec<String>,
    pub accuracies: Vec<f64>,
    pub coverages: Vec<f64>,
    pub class_balance: f64,
    pub method: FitMethod,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Moments,
    Em,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmInit {
    #[default]
    Moments,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelModelConfig {
    pub step_size: f64,
    pub iterations: usize,
    /// Starting accuracy for moment matching and for uniform EM init.
    pub initial_accuracy: f64,
    pub em_init: EmInit,
    pub em_tolerance: f64,
    pub em_max_iters: usize,
    pub seed: u64,
}

impl Default for LabelModelConfig {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            iterations: 2000,
            initial_accuracy: 0.7,
            em_init: EmInit::Moments,
            em_tolerance: 1e-6,
            em_max_iters: 1000,
            seed: 0,
        }
    }
}

impl LabelModelParams {
    pub fn validate(&self) -> Result<()> {
        let n = self.lf_names.len();
        if self.accuracies.len() != n || self.coverages.len() != n {
            return Err(Error::Config("label model: parameter lengths differ".into()));
        }
        if !(self.class_balance > 0.0 && self.class_balance < 1.0) {
            return Err(Error::Config(format!("class_balance {} must lie in (0, 1)", self.class_balance)));
        }
        if self.accuracies.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::Config("label model: accuracies must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Data(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: Self = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        p.validate()?;
        Ok(p)
    }
}

fn check_balance(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("class_balance {p} must lie in (0, 1)")))
    }
}

/// `P(Y = +1 | votes)`. Rows where every function abstains return the class
/// balance unchanged.
pub fn posterior(params: &LabelModelParams, votes: &[Vote]) -> Result<f64> {
    if votes.len() != params.accuracies.len() {
        return Err(Error::Data(format!("{} votes for {} labeling functions", votes.len(), params.accuracies.len())));
    }
    Ok(posterior_unchecked(&params.accuracies, params.class_balance, votes))
}

fn posterior_unchecked(accuracies: &[f64], p: f64, votes: &[Vote]) -> f64 {
    let mut log_pos = p.ln();
    let mut log_neg = (1.0 - p).ln();
    let mut any = false;
    for (&v, &a) in votes.iter().zip(accuracies) {
        match v {
            Vote::Positive => {
                log_pos += a.ln();
                log_neg += (1.0 - a).ln();
            }
            Vote::Negative => {
                log_pos += (1.0 - a).ln();
                log_neg += a.ln();
            }
            Vote::Abstain => continue,
        }
        any = true;
    }
    if !any {
        return p;
    }
    // Logistic of the log-odds, written to avoid overflow either way.
    let d = log_pos - log_neg;
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

/// Row-wise posteriors paired with group ids, in matrix order.
pub fn predict_labels(params: &LabelModelParams, matrix: &LabelMatrix) -> Result<Vec<(String, f64)>> {
    if matrix.n_lfs() != params.accuracies.len() {
        return Err(Error::Data(format!(
            "label matrix has {} labeling functions, model has {}",
            matrix.n_lfs(),
            params.accuracies.len()
        )));
    }
    Ok((0..matrix.n_rows())
        .into_par_iter()
        .map(|i| (matrix.group_ids()[i].clone(), posterior_unchecked(&params.accuracies, params.class_balance, matrix.row(i))))
        .collect())
}

fn coverages(matrix: &LabelMatrix) -> Vec<f64> {
    let n = matrix.n_rows().max(1) as f64;
    (0..matrix.n_lfs())
        .map(|j| matrix.column(j).filter(|v| !v.is_abstain()).count() as f64 / n)
        .collect()
}

/// Empirical agreement rate for every pair with at least one co-covered row.
fn agreement_stats(matrix: &LabelMatrix) -> Vec<(usize, usize, f64)> {
    let m = matrix.n_lfs();
    let mut agree = vec![0u64; m * m];
    let mut both = vec![0u64; m * m];
    for row in matrix.rows() {
        for j in 0..m {
            if row[j].is_abstain() {
                continue;
            }
            for k in j + 1..m {
                if row[k].is_abstain() {
                    continue;
                }
                both[j * m + k] += 1;
                if row[j] == row[k] {
                    agree[j * m + k] += 1;
                }
            }
        }
    }
    let mut out = Vec::new();
    for j in 0..m {
        for k in j + 1..m {
            if both[j * m + k] > 0 {
                out.push((j, k, agree[j * m + k] as f64 / both[j * m + k] as f64));
            }
        }
    }
    out
}

/// Resolves the global sign symmetry (mean accuracy at least 0.5) and clamps.
fn finalize(mut acc: Vec<f64>) -> Vec<f64> {
    let mean = acc.iter().sum::<f64>() / acc.len().max(1) as f64;
    if mean < 0.5 {
        acc.iter_mut().for_each(|a| *a = 1.0 - *a);
    }
    acc.iter_mut().for_each(|a| *a = a.clamp(ACCURACY_MIN, ACCURACY_MAX));
    acc
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fits accuracies by matching pairwise agreement rates. The model implies
/// `P(v_j == v_k | both vote) = 2 a_j a_k - a_j - a_k + 1`; the squared
/// residual summed over covered pairs is minimised by gradient descent on
/// logit-parameterised accuracies.
pub fn fit_moments(matrix: &LabelMatrix, class_balance: f64, config: &LabelModelConfig) -> Result<LabelModelParams> {
    check_balance(class_balance)?;
    let cov = coverages(matrix);
    let covering = cov.iter().filter(|&&c| c > 0.0).count();
    if covering < 2 {
        return Err(Error::Data(format!(
            "moment matching needs at least 2 labeling functions with nonzero coverage, found {covering}"
        )));
    }
    let pairs = agreement_stats(matrix);
    let m = matrix.n_lfs();
    let a0 = config.initial_accuracy.clamp(ACCURACY_MIN, ACCURACY_MAX);
    let mut theta = vec![(a0 / (1.0 - a0)).ln(); m];
    let mut grad = vec![0.0; m];
    for _ in 0..config.iterations {
        let a: Vec<f64> = theta.iter().map(|&t| sigmoid(t)).collect();
        grad.iter_mut().for_each(|g| *g = 0.0);
        for &(j, k, observed) in &pairs {
            let implied = 2.0 * a[j] * a[k] - a[j] - a[k] + 1.0;
            let r = observed - implied;
            grad[j] += -2.0 * r * (2.0 * a[k] - 1.0);
            grad[k] += -2.0 * r * (2.0 * a[j] - 1.0);
        }
        for j in 0..m {
            theta[j] -= config.step_size * grad[j] * a[j] * (1.0 - a[j]);
        }
    }
    let accuracies = finalize(theta.iter().map(|&t| sigmoid(t)).collect());
    Ok(LabelModelParams {
        lf_names: matrix.lf_names().to_vec(),
        accuracies,
        coverages: cov,
        class_balance,
        method: FitMethod::Moments,
        seed: config.seed,
    })
}

/// Expectation-maximisation with the class balance held fixed.
pub fn fit_em(matrix: &LabelMatrix, class_balance: f64, config: &LabelModelConfig) -> Result<LabelModelParams> {
    let init = match config.em_init {
        EmInit::Moments => fit_moments(matrix, class_balance, config)?.accuracies,
        EmInit::Uniform => {
            check_balance(class_balance)?;
            if coverages(matrix).iter().all(|&c| c == 0.0) {
                return Err(Error::Data("no labeling function votes on any row".into()));
            }
            vec![config.initial_accuracy.clamp(ACCURACY_MIN, ACCURACY_MAX); matrix.n_lfs()]
        }
    };
    let accuracies = em_from(matrix, class_balance, init, config.em_tolerance, config.em_max_iters);
    Ok(LabelModelParams {
        lf_names: matrix.lf_names().to_vec(),
        accuracies: finalize(accuracies),
        coverages: coverages(matrix),
        class_balance,
        method: FitMethod::Em,
        seed: config.seed,
    })
}

/// EM iterations from a given starting point, without sign resolution.
pub fn em_from(matrix: &LabelMatrix, class_balance: f64, mut acc: Vec<f64>, tolerance: f64, max_iters: usize) -> Vec<f64> {
    let m = matrix.n_lfs();
    let mut hits = vec![0.0; m];
    let mut counts = vec![0.0; m];
    for _ in 0..max_iters {
        hits.iter_mut().for_each(|h| *h = 0.0);
        counts.iter_mut().for_each(|c| *c = 0.0);
        for row in matrix.rows() {
            let q = posterior_unchecked(&acc, class_balance, row);
            for (j, &v) in row.iter().enumerate() {
                match v {
                    Vote::Positive => hits[j] += q,
                    Vote::Negative => hits[j] += 1.0 - q,
                    Vote::Abstain => continue,
                }
                counts[j] += 1.0;
            }
        }
        let mut delta: f64 = 0.0;
        for j in 0..m {
            if counts[j] > 0.0 {
                let next = (hits[j] / counts[j]).clamp(ACCURACY_MIN, ACCURACY_MAX);
                delta = delta.max((next - acc[j]).abs());
                acc[j] = next;
            }
        }
        if delta < tolerance {
            break;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use Vote::*;

    fn params(acc: &[f64], p: f64) -> LabelModelParams {
        LabelModelParams {
            lf_names: (0..acc.len()).map(|i| format!("lf{i}")).collect(),
            accuracies: acc.to_vec(),
            coverages: vec![1.0; acc.len()],
            class_balance: p,
            method: FitMethod::Manual,
            seed: 0,
        }
    }

    fn matrix(rows: Vec<Vec<Vote>>) -> LabelMatrix {
        let m = rows.first().map_or(0, |r| r.len());
        LabelMatrix::new(
            (0..rows.len()).map(|i| format!("g{i}")).collect(),
            (0..m).map(|j| format!("lf{j}")).collect(),
            rows,
        )
        .unwrap()
    }

    /// Votes drawn from the model itself.
    pub(crate) fn sample(acc: &[f64], cov: &[f64], p: f64, n: usize, seed: u64) -> (LabelMatrix, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::with_capacity(n);
        let mut truth = Vec::with_capacity(n);
        for _ in 0..n {
            let y = rng.random::<f64>() < p;
            let row = acc
                .iter()
                .zip(cov)
                .map(|(&a, &b)| {
                    if rng.random::<f64>() >= b {
                        return Abstain;
                    }
                    let correct = rng.random::<f64>() < a;
                    if correct == y {
                        Positive
                    } else {
                        Negative
                    }
                })
                .collect();
            rows.push(row);
            truth.push(y);
        }
        (matrix(rows), truth)
    }

    #[test]
    fn posterior_examples() {
        assert_eq!(posterior(&params(&[0.8, 0.6], 0.37), &[Abstain, Abstain]).unwrap(), 0.37);
        assert!((posterior(&params(&[0.9], 0.5), &[Positive]).unwrap() - 0.9).abs() < 1e-12);
        assert!((posterior(&params(&[0.7, 0.7], 0.5), &[Positive, Negative]).unwrap() - 0.5).abs() < 1e-12);
        assert!(posterior(&params(&[0.7], 0.5), &[Positive, Negative]).is_err());
    }

    #[test]
    fn posterior_extremes_stay_finite() {
        let p = params(&[0.99; 200], 0.5);
        assert_eq!(posterior(&p, &[Positive; 200]).unwrap(), 1.0);
        assert_eq!(posterior(&p, &[Negative; 200]).unwrap(), 0.0);
    }

    #[test]
    fn identical_functions_fit_to_perfect_agreement() {
        let rows = (0..200).map(|i| if i % 3 == 0 { vec![Negative, Negative] } else { vec![Positive, Positive] }).collect();
        // The residual gradient vanishes as accuracies saturate, so this
        // needs a longer run than the default budget.
        let cfg = LabelModelConfig {
            iterations: 200_000,
            ..Default::default()
        };
        let f = fit_moments(&matrix(rows), 0.5, &cfg).unwrap();
        let (a, b) = (f.accuracies[0], f.accuracies[1]);
        assert!((2.0 * a * b - a - b + 1.0) > 0.98, "{a} {b}");
    }

    #[test]
    fn half_agreement_is_a_fixed_point() {
        let rows = vec![vec![Positive, Positive], vec![Positive, Negative], vec![Negative, Negative], vec![Negative, Positive]];
        let cfg = LabelModelConfig {
            initial_accuracy: 0.5,
            ..Default::default()
        };
        let f = fit_moments(&matrix(rows), 0.5, &cfg).unwrap();
        assert!(f.accuracies.iter().all(|a| (a - 0.5).abs() < 1e-12));
    }

    #[test]
    fn moments_needs_two_covering_functions() {
        let m = matrix(vec![vec![Positive, Abstain], vec![Negative, Abstain]]);
        assert!(fit_moments(&m, 0.5, &LabelModelConfig::default()).is_err());
        assert!(fit_moments(&m, 1.0, &LabelModelConfig::default()).is_err());
    }

    #[test]
    fn single_function_em_stays_at_init() {
        let m = matrix(vec![vec![Positive], vec![Negative], vec![Positive]]);
        let cfg = LabelModelConfig {
            em_init: EmInit::Uniform,
            ..Default::default()
        };
        let f = fit_em(&m, 0.5, &cfg).unwrap();
        assert!((f.accuracies[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn recovers_planted_accuracies() {
        let truth = [0.9, 0.8, 0.75];
        let (m, _) = sample(&truth, &[0.6, 0.5, 0.7], 0.3, 10_000, 11);
        let mom = fit_moments(&m, 0.3, &LabelModelConfig::default()).unwrap();
        let em = fit_em(&m, 0.3, &LabelModelConfig::default()).unwrap();
        for j in 0..3 {
            assert!((mom.accuracies[j] - truth[j]).abs() < 0.03, "{:?}", mom.accuracies);
            assert!((em.accuracies[j] - truth[j]).abs() < 0.03, "{:?}", em.accuracies);
        }
    }

    #[test]
    fn em_is_stable_at_true_parameters() {
        let truth = vec![0.85, 0.75, 0.8, 0.7];
        let (m, _) = sample(&truth, &[0.7, 0.6, 0.5, 0.8], 0.4, 50_000, 5);
        let fitted = em_from(&m, 0.4, truth.clone(), 1e-9, 1000);
        for j in 0..4 {
            assert!((fitted[j] - truth[j]).abs() < 0.01, "{fitted:?}");
        }
    }

    #[test]
    fn sign_flip_convention() {
        assert_eq!(finalize(vec![0.2, 0.3]), vec![0.8, 0.7]);
        assert_eq!(finalize(vec![0.999, 0.2]), vec![0.99, 0.2]);
        let flipped = finalize(vec![0.005, 0.9]);
        assert_eq!(flipped[0], 0.99);
        assert!((flipped[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn predict_preserves_order_and_permutes() {
        let (m, _) = sample(&[0.8, 0.7, 0.9], &[0.5, 0.5, 0.5], 0.4, 50, 3);
        let p = params(&[0.8, 0.7, 0.9], 0.4);
        let out = predict_labels(&p, &m).unwrap();
        let perm: Vec<usize> = (0..50).rev().collect();
        let out2 = predict_labels(&p, &m.select_rows(&perm)).unwrap();
        for (i, &r) in perm.iter().enumerate() {
            assert_eq!(out2[i], out[r]);
        }
    }

    #[test]
    fn params_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm.json");
        let p = params(&[0.8, 0.6], 0.3);
        p.save(&path).unwrap();
        assert_eq!(LabelModelParams::load(&path).unwrap(), p);
    }

    fn vote() -> impl Strategy<Value = Vote> {
        prop_oneof![Just(Negative), Just(Abstain), Just(Positive)]
    }

    proptest! {
        #[test]
        fn abstain_to_positive_never_lowers(
            acc in proptest::collection::vec(0.51f64..0.99, 1..6),
            p in 0.05f64..0.95,
            seed_votes in proptest::collection::vec(vote(), 6),
            pick in 0usize..6,
        ) {
            let m = acc.len();
            let mut votes: Vec<Vote> = seed_votes[..m].to_vec();
            let j = pick % m;
            votes[j] = Abstain;
            let before = posterior(&params(&acc, p), &votes).unwrap();
            votes[j] = Positive;
            let after = posterior(&params(&acc, p), &votes).unwrap();
            prop_assert!(after >= before);
        }
    }
}
