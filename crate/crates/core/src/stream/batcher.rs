use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatcherPolicy {
    pub max_count: usize,
    /// Seconds.
    pub max_age: f64,
}

impl BatcherPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.max_count == 0 || !(self.max_age > 0.0) {
            return Err(Error::Config(format!("batcher needs max_count >= 1 and max_age > 0, got {self:?}")));
        }
        Ok(())
    }
}

/// Pending items with their arrival times, oldest first.
#[derive(Debug, Clone)]
pub struct Batcher<T> {
    policy: BatcherPolicy,
    pending: VecDeque<(f64, T)>,
}

impl<T> Batcher<T> {
    pub fn new(policy: BatcherPolicy) -> Result<Self> {
        policy.validate()?;
        Ok(Self {
            policy,
            pending: VecDeque::new(),
        })
    }

    pub fn push(&mut self, item: T, arrived: f64) {
        self.pending.push_back((arrived, item));
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn oldest_arrival(&self) -> Option<f64> {
        self.pending.front().map(|p| p.0)
    }

    /// A batch of the oldest `max_count` items once that many are pending,
    /// otherwise everything pending once the oldest has waited `max_age`.
    pub fn step(&mut self, now: f64) -> Option<Vec<T>> {
        let take = if self.pending.len() >= self.policy.max_count {
            self.policy.max_count
        } else if self.oldest_arrival().is_some_and(|t| now - t >= self.policy.max_age) {
            self.pending.len()
        } else {
            return None;
        };
        Some(self.pending.drain(..take).map(|p| p.1).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn batcher(max_count: usize, max_age: f64) -> Batcher<u32> {
        Batcher::new(BatcherPolicy { max_count, max_age }).unwrap()
    }

    #[test]
    fn count_trigger() {
        let mut b = batcher(5, 60.0);
        for i in 0..5 {
            b.push(i, 0.0);
        }
        assert_eq!(b.step(0.0), Some(vec![0, 1, 2, 3, 4]));
        assert!(b.is_empty());
    }

    #[test]
    fn age_trigger() {
        let mut b = batcher(5, 60.0);
        for i in 0..3 {
            b.push(i, 10.0 + i as f64);
        }
        assert_eq!(b.step(69.0), None);
        assert_eq!(b.step(70.0), Some(vec![0, 1, 2]));
    }

    #[test]
    fn young_and_few_waits() {
        let mut b = batcher(5, 60.0);
        b.push(1, 0.0);
        b.push(2, 1.0);
        assert_eq!(b.step(30.0), None);
        assert_eq!(b.len(), 2);
    }

    #[test]
    fn invalid_policy() {
        assert!(Batcher::<u8>::new(BatcherPolicy { max_count: 0, max_age: 1.0 }).is_err());
        assert!(Batcher::<u8>::new(BatcherPolicy { max_count: 1, max_age: 0.0 }).is_err());
    }

    proptest! {
        #[test]
        fn batches_obey_count_or_age(
            max_count in 1usize..8,
            max_age in 1.0f64..50.0,
            gaps in proptest::collection::vec((0.0f64..20.0, 0usize..4), 1..60),
        ) {
            let mut b = batcher(max_count, max_age);
            let mut now = 0.0;
            let mut next = 0u32;
            let mut seen = Vec::new();
            for (dt, n) in gaps {
                now += dt;
                for _ in 0..n {
                    b.push(next, now);
                    next += 1;
                }
                loop {
                    let before = b.len();
                    let oldest = b.oldest_arrival();
                    match b.step(now) {
                        Some(batch) => {
                            prop_assert!(!batch.is_empty());
                            prop_assert!(batch.len() <= max_count);
                            let by_count = before >= max_count && batch.len() == max_count;
                            let by_age = oldest.is_some_and(|t| now - t >= max_age);
                            prop_assert!(by_count || by_age);
                            seen.extend(batch);
                        }
                        None => {
                            prop_assert!(before < max_count);
                            prop_assert!(oldest.is_none_or(|t| now - t < max_age));
                            break;
                        }
                    }
                }
            }
            // order preserved
            prop_assert!(seen.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
