use crate::error::{Error, Result};

fn check(name: &str, xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::Argument(format!("auc: {name} scores are empty")));
    }
    if xs.iter().any(|v| v.is_nan()) {
        return Err(Error::Argument(format!("auc: {name} scores contain NaN")));
    }
    Ok(())
}

/// Probability that a positive outscores a negative, ties counting half.
///
/// Rank-sum form of the Mann–Whitney statistic. Ranks are kept doubled so
/// tie averages stay integral, which makes the result bit-identical to
/// counting all pairs.
pub fn auc(negative: &[f64], positive: &[f64]) -> Result<f64> {
    check("negative", negative)?;
    check("positive", positive)?;
    let mut all: Vec<(f64, bool)> = negative
        .iter()
        .map(|&v| (v, false))
        .chain(positive.iter().map(|&v| (v, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut doubled_rank_sum: u128 = 0;
    let mut start = 0;
    while start < all.len() {
        let mut end = start + 1;
        while end < all.len() && all[end].0 == all[start].0 {
            end += 1;
        }
        // Ranks start..end are 1-based start+1 ..= end; twice their mean:
        let doubled = (start + 1 + end) as u128;
        let positives = all[start..end].iter().filter(|p| p.1).count() as u128;
        doubled_rank_sum += doubled * positives;
        start = end;
    }
    let (n_pos, n_neg) = (positive.len() as u128, negative.len() as u128);
    let doubled_u = doubled_rank_sum - n_pos * (n_pos + 1);
    Ok(doubled_u as f64 / (2 * n_pos * n_neg) as f64)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn pairwise(neg: &[f64], pos: &[f64]) -> f64 {
        let mut doubled = 0u128;
        for &p in pos {
            for &n in neg {
                doubled += if p > n { 2 } else if p == n { 1 } else { 0 };
            }
        }
        doubled as f64 / (2 * pos.len() * neg.len()) as f64
    }

    #[test]
    fn hand_values() {
        assert_eq!(auc(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(auc(&[5.0; 4], &[5.0; 3]).unwrap(), 0.5);
        assert_eq!(auc(&[1.0, 3.0], &[2.0, 4.0]).unwrap(), 0.75);
        assert_eq!(auc(&[3.0, 4.0], &[1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn rejects_empty_and_nan() {
        assert!(matches!(auc(&[], &[1.0]), Err(Error::Argument(_))));
        assert!(auc(&[1.0], &[]).is_err());
        assert!(auc(&[f64::NAN], &[1.0]).is_err());
    }

    fn scores() -> impl Strategy<Value = Vec<f64>> {
        // Small integer grid so ties are common.
        prop::collection::vec((0i32..20).prop_map(f64::from), 1..60)
    }

    proptest! {
        #[test]
        fn equals_pair_counting(neg in scores(), pos in scores()) {
            prop_assert_eq!(auc(&neg, &pos).unwrap(), pairwise(&neg, &pos));
        }

        #[test]
        fn complementary_without_ties(
            neg in prop::collection::vec(-1e3f64..1e3, 1..40),
            pos in prop::collection::vec(-1e3f64..1e3, 1..40),
        ) {
            prop_assume!(neg.iter().all(|n| !pos.contains(n)));
            let s = auc(&neg, &pos).unwrap() + auc(&pos, &neg).unwrap();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn invariant_under_monotone_maps(neg in scores(), pos in scores()) {
            let f = |v: &f64| (v / 3.0).exp() - 7.0;
            let a = auc(&neg, &pos).unwrap();
            let b = auc(&neg.iter().map(f).collect::<Vec<_>>(), &pos.iter().map(f).collect::<Vec<_>>()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
