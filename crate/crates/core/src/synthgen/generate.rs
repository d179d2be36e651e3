use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::txprep::{group_key, normalize, Cents, Day, NormalizedText, Transaction, TransactionGroup};

use super::{CategorySpec, SynthConfig};

/// Ground truth for one generated group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub account_id: String,
    /// Merchant description before any noise.
    pub description: String,
    /// Group key text the noisy description normalizes to.
    pub normalized_text: String,
    pub categories: Vec<String>,
}

const COLLISION_RETRIES: usize = 20;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn account_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(index as u64)))
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}

fn spelling_noise(token: &str, spec: &CategorySpec, rng: &mut impl Rng) -> String {
    let mut t = token.to_string();
    if t.len() > 4 && rng.random_bool(spec.noise.truncate) {
        let keep = rng.random_range(3..t.len());
        t.truncate(keep);
    }
    if rng.random_bool(spec.noise.vowel_drop) {
        let dropped: String = t.chars().enumerate().filter(|&(i, c)| i == 0 || !is_vowel(c)).map(|(_, c)| c).collect();
        if dropped.len() >= 2 {
            t = dropped;
        }
    }
    t
}

fn refcode(rng: &mut impl Rng) -> String {
    const ALNUM: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
    let mut s = String::new();
    s.push(rng.random_range(b'A'..=b'Z') as char);
    s.push(rng.random_range(b'0'..=b'9') as char);
    for _ in 0..rng.random_range(4..9) {
        s.push(*ALNUM.choose(rng).expect("non-empty") as char);
    }
    s
}

fn digit_noise(rng: &mut impl Rng) -> String {
    match rng.random_range(0..3) {
        0 => format!("#{}", rng.random_range(1000..100_000)),
        1 => format!("{:02}/{:02}", rng.random_range(1..13), rng.random_range(1..29)),
        _ => format!("{}", rng.random_range(10..10_000)),
    }
}

struct Instance {
    clean: String,
    noisy_tokens: Vec<String>,
    key: String,
}

fn draw_instance(config: &SynthConfig, spec: &CategorySpec, rng: &mut impl Rng) -> Instance {
    let template = match &spec.merchant_weights {
        Some(w) => &spec.merchants[WeightedIndex::new(w).expect("validated weights").sample(rng)],
        None => spec.merchants.choose(rng).expect("validated non-empty"),
    };
    let mut merchant = template.clone();
    while merchant.contains("{name}") {
        let name = config.names.choose(rng).expect("validated names");
        merchant = merchant.replacen("{name}", name, 1);
    }
    let prefix = spec.prefixes.choose(rng).map(String::as_str).unwrap_or("");
    let clean = if prefix.is_empty() { merchant } else { format!("{prefix} {merchant}") };
    let noisy_tokens: Vec<String> = clean.split_whitespace().map(|t| spelling_noise(t, spec, rng)).collect();
    let key = normalize(&noisy_tokens.join(" "), None).render();
    Instance { clean, noisy_tokens, key }
}

fn draw_dates(config: &SynthConfig, spec: &CategorySpec, n: usize, rng: &mut impl Rng) -> Vec<Day> {
    let (start, end) = (config.start.0, config.end.0);
    match spec.recurrence {
        Some(r) => {
            let need = ((n - 1) as f64 * r.gap_mean).round() as i32;
            let first = if end - need > start { rng.random_range(start..=end - need) } else { start };
            let gaps = Normal::new(r.gap_mean, r.gap_std).expect("validated recurrence");
            let mut dates = vec![Day(first)];
            let mut day = first;
            while dates.len() < n {
                day += (gaps.sample(rng).round() as i32).max(1);
                if day > end {
                    break;
                }
                dates.push(Day(day));
            }
            dates
        }
        None => {
            let mut dates: Vec<Day> = (0..n).map(|_| Day(rng.random_range(start..=end))).collect();
            dates.sort();
            dates
        }
    }
}

fn draw_amounts(spec: &CategorySpec, n: usize, rng: &mut impl Rng) -> Vec<Cents> {
    let a = &spec.amount;
    let base = a.median * (a.sigma * rng.sample::<f64, _>(rand_distr::StandardNormal)).exp();
    let step_at = if n > 1 && rng.random_bool(a.step_prob) { rng.random_range(1..n) } else { n };
    (0..n)
        .map(|i| {
            let mut v = base * (a.jitter * rng.sample::<f64, _>(rand_distr::StandardNormal)).exp();
            if i >= step_at {
                v *= 1.0 + a.step;
            }
            let c = Cents::from_f64(v).0.max(1);
            Cents(if a.credit { -c } else { c })
        })
        .collect()
}

fn render_description(tokens: &[String], spec: &CategorySpec, upper: bool, rng: &mut impl Rng) -> String {
    let mut parts: Vec<String> = tokens.to_vec();
    if rng.random_bool(spec.noise.refcode) {
        let at = if rng.random_bool(0.5) { 0 } else { parts.len() };
        parts.insert(at, refcode(rng));
    }
    if rng.random_bool(spec.noise.digits) {
        parts.push(digit_noise(rng));
    }
    let text = parts.join(" ");
    if upper {
        text.to_uppercase()
    } else {
        text
    }
}

fn generate_account(config: &SynthConfig, index: usize) -> (Vec<Transaction>, Vec<TruthRecord>) {
    let mut rng = account_rng(config.seed, index);
    let account_id = format!("acct{index:06}");
    let slots = rng.random_range(config.slots[0]..=config.slots[1]);
    let mut used: HashMap<String, usize> = HashMap::new();
    let mut truth = Vec::new();
    let mut rows: Vec<(Day, Cents, String)> = Vec::new();
    for _ in 0..slots {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let Some(spec) = config.categories.iter().find(|c| {
            acc += c.prevalence;
            u < acc
        }) else {
            continue;
        };
        let Some(inst) = (0..COLLISION_RETRIES)
            .map(|_| draw_instance(config, spec, &mut rng))
            .find(|i| !used.contains_key(&i.key))
        else {
            continue;
        };
        used.insert(inst.key.clone(), truth.len());
        let n = rng.random_range(spec.count[0]..=spec.count[1]);
        let dates = draw_dates(config, spec, n, &mut rng);
        let amounts = draw_amounts(spec, dates.len(), &mut rng);
        let upper = rng.random_bool(0.5);
        for (d, a) in dates.into_iter().zip(amounts) {
            rows.push((d, a, render_description(&inst.noisy_tokens, spec, upper, &mut rng)));
        }
        truth.push(TruthRecord {
            account_id: account_id.clone(),
            description: inst.clean,
            normalized_text: inst.key,
            categories: vec![spec.name.clone()],
        });
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    let transactions = rows
        .into_iter()
        .enumerate()
        .map(|(k, (date, amount, description))| Transaction {
            account_id: account_id.clone(),
            transaction_id: format!("{account_id}-{k:05}"),
            date,
            amount,
            description,
            merchant_name: None,
        })
        .collect();
    (transactions, truth)
}

/// Generates the corpus and its ground truth. Accounts are produced in
/// parallel from per-account seeds, so the output is independent of the
/// thread count.
pub fn generate(config: &SynthConfig) -> Result<(Vec<Transaction>, Vec<TruthRecord>)> {
    config.validate()?;
    let parts: Vec<_> = (0..config.n_accounts).into_par_iter().map(|i| generate_account(config, i)).collect();
    let mut transactions = Vec::new();
    let mut truth = Vec::new();
    for (t, r) in parts {
        transactions.extend(t);
        truth.extend(r);
    }
    Ok((transactions, truth))
}

/// Gold labels for `category`, aligned with `groups`.
pub fn truth_labels(groups: &[TransactionGroup], truth: &[TruthRecord], category: &str) -> Result<Vec<bool>> {
    let index: HashMap<String, &TruthRecord> = truth.iter().map(|r| (group_key(&r.account_id, &r.normalized_text), r)).collect();
    groups
        .iter()
        .map(|g| {
            let id = g.group_id();
            index
                .get(&id)
                .map(|r| r.categories.iter().any(|c| c == category))
                .ok_or_else(|| Error::Data(format!("group {id} has no ground-truth record")))
        })
        .collect()
}

/// Sentences of `len` words, each drawn from one randomly chosen cluster.
pub fn planted_cluster_corpus(clusters: &[Vec<String>], sentences: usize, len: usize, seed: u64) -> Vec<NormalizedText> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let live: Vec<&Vec<String>> = clusters.iter().filter(|c| !c.is_empty()).collect();
    if live.is_empty() {
        return Vec::new();
    }
    (0..sentences)
        .map(|_| {
            let c = live.choose(&mut rng).expect("non-empty");
            NormalizedText::from_tokens((0..len).map(|_| c.choose(&mut rng).expect("non-empty").clone()).collect())
        })
        .collect()
}
