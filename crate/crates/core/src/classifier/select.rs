use rayon::prelude::*;

use crate::error::{Error, Result};

/// One finished training run.
#[derive(Debug, Clone)]
pub struct RunOutcome<T> {
    pub seed: u64,
    pub val_balanced_accuracy: f64,
    pub payload: T,
}

#[derive(Debug, Clone)]
pub struct Selection<T> {
    /// Successful runs, best first (ties by ascending seed).
    pub ranked: Vec<RunOutcome<T>>,
    pub failed: Vec<(u64, String)>,
    /// Index into `ranked` of the selected run (`rank - 1`).
    pub selected: usize,
}

impl<T> Selection<T> {
    pub fn chosen(&self) -> &RunOutcome<T> {
        &self.ranked[self.selected]
    }
}

/// Runs `runs` trainings with seeds `base_seed + i` and returns the run at
/// 1-based `rank` by validation balanced accuracy. With `parallel`, runs
/// execute on the rayon pool; each run is itself single-threaded.
pub fn multi_run_select<T, F>(runs: usize, rank: usize, base_seed: u64, parallel: bool, run: F) -> Result<Selection<T>>
where
    T: Send,
    F: Fn(u64) -> Result<(f64, T)> + Sync,
{
    if rank == 0 || rank > runs {
        return Err(Error::Config(format!("need 1 <= rank <= runs, got rank {rank} of {runs}")));
    }
    let seeds: Vec<u64> = (0..runs as u64).map(|i| base_seed.wrapping_add(i)).collect();
    let results: Vec<(u64, Result<(f64, T)>)> = if parallel {
        seeds.par_iter().map(|&s| (s, run(s))).collect()
    } else {
        seeds.iter().map(|&s| (s, run(s))).collect()
    };
    let mut ranked = Vec::new();
    let mut failed = Vec::new();
    for (seed, r) in results {
        match r {
            Ok((score, payload)) if score.is_finite() => ranked.push(RunOutcome {
                seed,
                val_balanced_accuracy: score,
                payload,
            }),
            Ok((score, _)) => failed.push((seed, format!("non-finite validation score {score}"))),
            Err(e) => {
                log::warn!("run with seed {seed} failed: {e}");
                failed.push((seed, e.to_string()));
            }
        }
    }
    ranked.sort_by(|a, b| b.val_balanced_accuracy.total_cmp(&a.val_balanced_accuracy).then(a.seed.cmp(&b.seed)));
    if ranked.len() < rank {
        return Err(Error::Runtime(format!(
            "only {} of {runs} runs succeeded; cannot select rank {rank}",
            ranked.len()
        )));
    }
    Ok(Selection {
        ranked,
        failed,
        selected: rank - 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tenth_of_fifty() {
        let s = multi_run_select(50, 10, 100, true, |seed| Ok(((seed % 50) as f64 / 50.0, seed))).unwrap();
        assert_eq!(s.selected, 9);
        assert_eq!(s.ranked.len(), 50);
        // scores (seed-100)/50 descending: seed 149 first, the 10th is 140
        assert_eq!(s.chosen().seed, 140);
    }

    #[test]
    fn single_run() {
        let s = multi_run_select(1, 1, 7, false, |seed| Ok((0.3, seed))).unwrap();
        assert_eq!(s.chosen().payload, 7);
    }

    #[test]
    fn ties_pick_lowest_seed_order() {
        let s = multi_run_select(5, 3, 0, true, |seed| Ok((0.8, seed))).unwrap();
        assert_eq!(s.ranked.iter().map(|r| r.seed).collect::<Vec<_>>(), [0, 1, 2, 3, 4]);
        assert_eq!(s.chosen().seed, 2);
    }

    #[test]
    fn failures_are_excluded() {
        let s = multi_run_select(4, 2, 0, false, |seed| {
            if seed % 2 == 0 {
                Err(Error::Runtime("boom".into()))
            } else {
                Ok((seed as f64, ()))
            }
        })
        .unwrap();
        assert_eq!(s.failed.len(), 2);
        assert_eq!(s.chosen().seed, 1);
        assert!(multi_run_select(4, 3, 0, false, |seed| if seed == 0 { Ok((1.0, ())) } else { Err(Error::Runtime("x".into())) }).is_err());
        assert!(multi_run_select(2, 3, 0, false, |_| Ok((1.0, ()))).is_err());
    }
}
