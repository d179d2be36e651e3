use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::txprep::TransactionGroup;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
}

/// Assigns whole accounts to folds. Accounts are sorted, shuffled with
/// `seed`, and cut at `round(f0 * n)` and `round((f0 + f1) * n)`; item
/// indices keep their input order within a fold.
pub fn split_indices<'a>(account_of: impl Iterator<Item = &'a str> + Clone, fractions: [f64; 3], seed: u64) -> Result<Split<usize>> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions {fractions:?} must be in [0, 1] and sum to 1")));
    }
    let mut accounts: Vec<&str> = account_of.clone().collect::<BTreeSet<_>>().into_iter().collect();
    accounts.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = accounts.len() as f64;
    let cut1 = (fractions[0] * n).round() as usize;
    let cut2 = (((fractions[0] + fractions[1]) * n).round() as usize).clamp(cut1, accounts.len());
    let fold: BTreeMap<&str, u8> = accounts
        .iter()
        .enumerate()
        .map(|(i, a)| (*a, if i < cut1 { 0 } else if i < cut2 { 1 } else { 2 }))
        .collect();
    let mut out = Split::default();
    for (i, a) in account_of.enumerate() {
        match fold[a] {
            0 => out.train.push(i),
            1 => out.validation.push(i),
            _ => out.test.push(i),
        }
    }
    Ok(out)
}

/// Account-disjoint train/validation/test split of groups.
pub fn split(groups: &[TransactionGroup], fractions: [f64; 3], seed: u64) -> Result<Split<TransactionGroup>> {
    let idx = split_indices(groups.iter().map(|g| g.account_id.as_str()), fractions, seed)?;
    let pick = |v: &[usize]| v.iter().map(|&i| groups[i].clone()).collect();
    Ok(Split {
        train: pick(&idx.train),
        validation: pick(&idx.validation),
        test: pick(&idx.test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn accounts(n: usize, per: usize) -> Vec<String> {
        (0..n).flat_map(|a| std::iter::repeat_n(format!("a{a:04}"), per)).collect()
    }

    fn fold_accounts(ids: &[String], idx: &[usize]) -> BTreeSet<String> {
        idx.iter().map(|&i| ids[i].clone()).collect()
    }

    #[test]
    fn everything_in_train() {
        let ids = accounts(10, 2);
        let s = split_indices(ids.iter().map(String::as_str), [1.0, 0.0, 0.0], 1).unwrap();
        assert_eq!(s.train, (0..20).collect::<Vec<_>>());
        assert!(s.validation.is_empty() && s.test.is_empty());
    }

    #[test]
    fn thousand_accounts_seventy_fifteen_fifteen() {
        let ids = accounts(1000, 1);
        let s = split_indices(ids.iter().map(String::as_str), [0.7, 0.15, 0.15], 4).unwrap();
        for (got, want) in [(s.train.len(), 700i64), (s.validation.len(), 150), (s.test.len(), 150)] {
            assert!((got as i64 - want).abs() <= 1, "{got} vs {want}");
        }
    }

    #[test]
    fn bad_fractions_are_rejected() {
        let ids = accounts(3, 1);
        assert!(split_indices(ids.iter().map(String::as_str), [0.5, 0.5, 0.5], 0).is_err());
        assert!(split_indices(ids.iter().map(String::as_str), [1.5, -0.5, 0.0], 0).is_err());
    }

    proptest! {
        #[test]
        fn folds_are_account_disjoint(n in 1usize..60, per in 1usize..6, seed in any::<u64>(), f0 in 0.0f64..1.0) {
            let ids = accounts(n, per);
            let f1 = (1.0 - f0) / 2.0;
            let s = split_indices(ids.iter().map(String::as_str), [f0, f1, 1.0 - f0 - f1], seed).unwrap();
            prop_assert_eq!(s.train.len() + s.validation.len() + s.test.len(), ids.len());
            let (a, b, c) = (fold_accounts(&ids, &s.train), fold_accounts(&ids, &s.validation), fold_accounts(&ids, &s.test));
            prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
            prop_assert_eq!(a.len() + b.len() + c.len(), n);
        }
    }
}
