use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelPolicy {
    /// Half of every batch labeled, labeled rows resampled with replacement.
    Balanced,
    /// Plain shuffled batches, whatever the label mix.
    Natural,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub policy: LabelPolicy,
    pub seed: u64,
}

impl BatchPlan {
    pub fn balanced(batch_size: usize, seed: u64) -> Self {
        BatchPlan {
            batch_size,
            policy: LabelPolicy::Balanced,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Argument(format!(
                "batch size {} is too small",
                self.batch_size
            )));
        }
        Ok(())
    }
}

/// Row indices of every batch in epoch `epoch`.
///
/// Under [`LabelPolicy::Balanced`] with both pools nonempty, each batch
/// pairs `⌊b/2⌋` fresh unlabeled rows with `⌈b/2⌉` labeled rows drawn with
/// replacement; an epoch visits each unlabeled row once. A trailing batch
/// holding fewer than `⌊b/2⌋` unlabeled rows is matched with the same number
/// of labeled draws. Labeled rows come first in every batch. Otherwise
/// batches are a shuffled partition of all rows.
pub fn epoch_batches(labels: &[Option<usize>], plan: &BatchPlan, epoch: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    rng.set_stream(epoch);
    let (labeled, mut unlabeled): (Vec<usize>, Vec<usize>) =
        (0..labels.len()).partition(|&i| labels[i].is_some());
    if plan.policy == LabelPolicy::Natural || labeled.is_empty() || unlabeled.is_empty() {
        let mut all: Vec<usize> = (0..labels.len()).collect();
        all.shuffle(&mut rng);
        return all.chunks(plan.batch_size).map(<[usize]>::to_vec).collect();
    }
    unlabeled.shuffle(&mut rng);
    let half = plan.batch_size / 2;
    let odd = plan.batch_size % 2;
    unlabeled
        .chunks(half.max(1))
        .map(|chunk| {
            let draws = if chunk.len() == half { half + odd } else { chunk.len() };
            let mut batch: Vec<usize> = (0..draws)
                .map(|_| labeled[rng.gen_range(0..labeled.len())])
                .collect();
            batch.extend_from_slice(chunk);
            batch
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use proptest::prelude::*;

    use super::*;

    fn labels(n: usize, labeled: usize) -> Vec<Option<usize>> {
        (0..n).map(|i| (i < labeled).then_some(i % 10)).collect()
    }

    #[test]
    fn unlabeled_coverage_is_exact() {
        let ls = labels(1000, 37);
        let plan = BatchPlan::balanced(128, 5);
        let batches = epoch_batches(&ls, &plan, 0);
        let mut seen: HashMap<usize, usize> = HashMap::new();
        for b in &batches {
            for &i in b.iter().filter(|&&i| ls[i].is_none()) {
                *seen.entry(i).or_default() += 1;
            }
        }
        assert_eq!(seen.len(), 963);
        assert!(seen.values().all(|&c| c == 1));
    }

    #[test]
    fn full_batches_split_evenly() {
        let ls = labels(1000, 37);
        for b in epoch_batches(&ls, &BatchPlan::balanced(128, 1), 3) {
            let l = b.iter().filter(|&&i| ls[i].is_some()).count();
            assert_eq!(l, b.len() - l);
            assert!(b[..l].iter().all(|&i| ls[i].is_some()));
        }
    }

    #[test]
    fn single_pool_falls_back_to_shuffle() {
        let ls = labels(300, 300);
        let batches = epoch_batches(&ls, &BatchPlan::balanced(128, 2), 0);
        assert_eq!(batches.iter().map(Vec::len).collect::<Vec<_>>(), [128, 128, 44]);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..300).collect::<Vec<_>>());
    }

    #[test]
    fn epochs_differ_and_repeat() {
        let ls = labels(500, 50);
        let plan = BatchPlan::balanced(64, 9);
        assert_eq!(epoch_batches(&ls, &plan, 1), epoch_batches(&ls, &plan, 1));
        assert_ne!(epoch_batches(&ls, &plan, 1), epoch_batches(&ls, &plan, 2));
    }

    proptest! {
        #[test]
        fn balanced_batches_differ_by_at_most_one(
            n in 2usize..400, frac in 0.01f64..0.99, batch in 2usize..70, seed in any::<u64>()
        ) {
            let labeled = ((n as f64 * frac) as usize).clamp(1, n - 1);
            let ls = labels(n, labeled);
            for b in epoch_batches(&ls, &BatchPlan::balanced(batch, seed), 0) {
                let l = b.iter().filter(|&&i| ls[i].is_some()).count() as i64;
                prop_assert!((2 * l - b.len() as i64).abs() <= 1);
                prop_assert!(b.len() <= batch);
            }
        }
    }
}
