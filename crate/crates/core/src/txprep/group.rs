use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::normalize::{normalize, NormalizedText};
use super::types::{Cents, Day, Transaction};

/// One step of a sparse series: the amount and the number of days since the
/// previous (more recent) entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesEntry {
    pub amount: Cents,
    pub delta_days: u32,
}

/// Most-recent-first `(amount, delta_days)` sequence. `entries[0]` always has
/// `delta_days == 0`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SparseSeries {
    pub entries: Vec<SeriesEntry>,
}

impl SparseSeries {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Dates implied by the deltas, most recent first, anchored at `latest`.
    pub fn reconstruct_dates(&self, latest: Day) -> Vec<Day> {
        let mut day = latest.0;
        self.entries
            .iter()
            .map(|e| {
                day -= e.delta_days as i32;
                Day(day)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAggregates {
    pub max: f64,
    pub min: f64,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    /// `std / mean`; `None` when the mean is zero.
    pub coeff_var: Option<f64>,
    /// Mean gap between consecutive dates; `None` for a single transaction.
    pub mean_gap_days: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionGroup {
    pub account_id: String,
    pub normalized_text: NormalizedText,
    pub members: Vec<Transaction>,
    pub series: SparseSeries,
    pub aggregates: GroupAggregates,
}

impl TransactionGroup {
    /// Builds a group from members that share an account and normalized text.
    pub fn from_members(account_id: String, normalized_text: NormalizedText, members: Vec<Transaction>) -> Self {
        let series = build_sparse_series(&members);
        let aggregates = compute_aggregates(&members);
        Self {
            account_id,
            normalized_text,
            members,
            series,
            aggregates,
        }
    }

    /// Stable identifier: `account_id|rendered text`.
    pub fn group_id(&self) -> String {
        group_key(&self.account_id, &self.normalized_text.render())
    }
}

pub fn group_key(account_id: &str, rendered: &str) -> String {
    format!("{account_id}|{rendered}")
}

/// Partitions transactions by `(account_id, rendered normalized text)`.
/// Output is sorted by that key.
pub fn group(transactions: &[Transaction]) -> Vec<TransactionGroup> {
    let mut buckets: BTreeMap<(String, String), (NormalizedText, Vec<Transaction>)> = BTreeMap::new();
    for t in transactions {
        let text = normalize(&t.description, t.merchant_name.as_deref());
        buckets
            .entry((t.account_id.clone(), text.render()))
            .or_insert_with(|| (text, Vec::new()))
            .1
            .push(t.clone());
    }
    buckets
        .into_iter()
        .map(|((account, _), (text, members))| TransactionGroup::from_members(account, text, members))
        .collect()
}

fn most_recent_first(members: &[Transaction]) -> Vec<&Transaction> {
    let mut sorted: Vec<&Transaction> = members.iter().collect();
    sorted.sort_by(|a, b| {
        b.date
            .cmp(&a.date)
            .then(b.amount.cmp(&a.amount))
            .then(a.transaction_id.cmp(&b.transaction_id))
    });
    sorted
}

/// Most-recent-first series; same-day ties ordered by descending amount,
/// then ascending transaction id.
pub fn build_sparse_series(members: &[Transaction]) -> SparseSeries {
    let sorted = most_recent_first(members);
    let mut prev: Option<Day> = None;
    let entries = sorted
        .iter()
        .map(|t| {
            let delta = prev.map_or(0, |p| (p.0 - t.date.0) as u32);
            prev = Some(t.date);
            SeriesEntry {
                amount: t.amount,
                delta_days: delta,
            }
        })
        .collect();
    SparseSeries { entries }
}

/// Summary statistics over member amounts (in currency units) and dates.
/// Uses the sample (`n - 1`) standard deviation.
pub fn compute_aggregates(members: &[Transaction]) -> GroupAggregates {
    let n = members.len();
    let mut amounts: Vec<f64> = members.iter().map(|t| t.amount.as_f64()).collect();
    amounts.sort_by(f64::total_cmp);
    if n == 0 {
        return GroupAggregates {
            max: 0.0,
            min: 0.0,
            count: 0,
            mean: 0.0,
            std: 0.0,
            median: 0.0,
            coeff_var: None,
            mean_gap_days: None,
        };
    }
    let mean = amounts.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (amounts.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let median = if n % 2 == 1 {
        amounts[n / 2]
    } else {
        (amounts[n / 2 - 1] + amounts[n / 2]) / 2.0
    };
    let mean_gap_days = if n > 1 {
        let first = members.iter().map(|t| t.date).min().expect("non-empty");
        let last = members.iter().map(|t| t.date).max().expect("non-empty");
        Some((last.0 - first.0) as f64 / (n - 1) as f64)
    } else {
        None
    };
    GroupAggregates {
        max: amounts[n - 1],
        min: amounts[0],
        count: n,
        mean,
        std,
        median,
        coeff_var: (mean != 0.0).then(|| std / mean),
        mean_gap_days,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tx(account: &str, id: &str, date: (i32, u32, u32), cents: i64, desc: &str) -> Transaction {
        Transaction {
            account_id: account.into(),
            transaction_id: id.into(),
            date: Day::from_ymd(date.0, date.1, date.2).unwrap(),
            amount: Cents(cents),
            description: desc.into(),
            merchant_name: None,
        }
    }

    #[test]
    fn series_orders_same_day_by_amount() {
        let m = vec![
            tx("a", "1", (2023, 1, 1), 5000, "x"),
            tx("a", "2", (2023, 1, 15), 5000, "x"),
            tx("a", "3", (2023, 1, 15), 1000, "x"),
        ];
        let s = build_sparse_series(&m);
        let pairs: Vec<_> = s.entries.iter().map(|e| (e.amount.0, e.delta_days)).collect();
        assert_eq!(pairs, [(5000, 0), (1000, 0), (5000, 14)]);
    }

    #[test]
    fn series_single_and_same_day() {
        let s = build_sparse_series(&[tx("a", "1", (2023, 1, 1), 700, "x")]);
        assert_eq!(s.entries, [SeriesEntry { amount: Cents(700), delta_days: 0 }]);
        let s = build_sparse_series(&[tx("a", "1", (2023, 1, 1), 700, "x"), tx("a", "2", (2023, 1, 1), 700, "x")]);
        assert_eq!(s.entries.iter().map(|e| e.delta_days).collect::<Vec<_>>(), [0, 0]);
    }

    #[test]
    fn aggregates_of_three_amounts() {
        let m = vec![
            tx("a", "1", (2023, 1, 1), 1000, "x"),
            tx("a", "2", (2023, 1, 15), 2000, "x"),
            tx("a", "3", (2023, 1, 29), 3000, "x"),
        ];
        let a = compute_aggregates(&m);
        assert_eq!(a.count, 3);
        assert_eq!((a.min, a.max, a.mean, a.median), (10.0, 30.0, 20.0, 20.0));
        assert!((a.std - 10.0).abs() < 1e-12);
        assert!((a.coeff_var.unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(a.mean_gap_days, Some(14.0));
    }

    #[test]
    fn aggregates_single_and_zero_mean() {
        let a = compute_aggregates(&[tx("a", "1", (2023, 1, 1), 700, "x")]);
        assert_eq!((a.std, a.mean_gap_days), (0.0, None));
        let a = compute_aggregates(&[tx("a", "1", (2023, 1, 1), 700, "x"), tx("a", "2", (2023, 1, 3), -700, "x")]);
        assert_eq!(a.coeff_var, None);
        assert_eq!(a.median, 0.0);
    }

    #[test]
    fn grouping_examples() {
        let g = group(&[
            tx("a", "1", (2023, 1, 1), 100, "NETFLIX 1234"),
            tx("a", "2", (2023, 2, 1), 100, "NETFLIX 9876"),
        ]);
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].members.len(), 2);
        assert_eq!(g[0].group_id(), "a|netflix");

        let g = group(&[tx("a", "1", (2023, 1, 1), 100, "NETFLIX"), tx("b", "2", (2023, 1, 1), 100, "NETFLIX")]);
        assert_eq!(g.len(), 2);
        assert!(group(&[]).is_empty());
    }

    fn arb_transactions() -> impl Strategy<Value = Vec<Transaction>> {
        proptest::collection::vec(
            (0u8..3, 0u8..4, 0i32..400, -50_000i64..50_000),
            0..40,
        )
        .prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, (acct, desc, day, cents))| Transaction {
                    account_id: format!("acct{acct}"),
                    transaction_id: format!("t{i:03}"),
                    date: Day(19_000 + day),
                    amount: Cents(cents),
                    description: ["RENT 01", "COFFEE", "GYM #2", "rent 77"][desc as usize].into(),
                    merchant_name: None,
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn grouping_is_a_partition(txs in arb_transactions()) {
            let groups = group(&txs);
            let total: usize = groups.iter().map(|g| g.members.len()).sum();
            prop_assert_eq!(total, txs.len());
            let mut ids: Vec<_> = groups.iter().flat_map(|g| g.members.iter().map(|t| t.transaction_id.clone())).collect();
            ids.sort();
            let mut expected: Vec<_> = txs.iter().map(|t| t.transaction_id.clone()).collect();
            expected.sort();
            prop_assert_eq!(ids, expected);
            for g in &groups {
                prop_assert!(!g.members.is_empty());
                for m in &g.members {
                    prop_assert_eq!(&m.account_id, &g.account_id);
                    prop_assert_eq!(&normalize(&m.description, None), &g.normalized_text);
                }
            }
            let keys: Vec<_> = groups.iter().map(|g| (g.account_id.clone(), g.normalized_text.render())).collect();
            let mut sorted = keys.clone();
            sorted.sort();
            prop_assert_eq!(keys, sorted);
        }

        #[test]
        fn series_round_trips_dates(txs in arb_transactions()) {
            prop_assume!(!txs.is_empty());
            let s = build_sparse_series(&txs);
            prop_assert_eq!(s.len(), txs.len());
            prop_assert_eq!(s.entries[0].delta_days, 0);
            let latest = txs.iter().map(|t| t.date).max().unwrap();
            let mut dates: Vec<Day> = txs.iter().map(|t| t.date).collect();
            dates.sort_by(|a, b| b.cmp(a));
            prop_assert_eq!(s.reconstruct_dates(latest), dates);
        }

        #[test]
        fn aggregates_match_brute_force(txs in arb_transactions()) {
            prop_assume!(!txs.is_empty());
            let a = compute_aggregates(&txs);
            let xs: Vec<f64> = txs.iter().map(|t| t.amount.0 as f64 / 100.0).collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            prop_assert!((a.mean - mean).abs() < 1e-9);
            prop_assert_eq!(a.max, xs.iter().cloned().fold(f64::MIN, f64::max));
            prop_assert_eq!(a.min, xs.iter().cloned().fold(f64::MAX, f64::min));
            // median: count elements strictly below / above
            let below = xs.iter().filter(|&&x| x < a.median).count();
            let above = xs.iter().filter(|&&x| x > a.median).count();
            prop_assert!(below as f64 <= n / 2.0 && above as f64 <= n / 2.0);
            prop_assert!(a.min <= a.median && a.median <= a.max);
            if xs.len() > 1 {
                let var: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
                prop_assert!((a.std - var.sqrt()).abs() < 1e-6);
                let mut days: Vec<i32> = txs.iter().map(|t| t.date.0).collect();
                days.sort();
                let gaps: Vec<f64> = days.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
                let mg = gaps.iter().sum::<f64>() / gaps.len() as f64;
                prop_assert!((a.mean_gap_days.unwrap() - mg).abs() < 1e-9);
            }
        }
    }
}
