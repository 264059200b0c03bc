//! Loss terms. Every part is averaged over the batch.

use super::{ForwardOutputs, Variant};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Clamp applied to reconstructions before taking logs.
pub const RECON_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha_weight: f64,
    pub beta_norm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha_weight: 1.0,
            beta_norm: 1.0,
        }
    }
}

/// Loss scalar plus the unweighted parts that make it up.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub reconstruction: Option<Var>,
    pub kl: Option<Var>,
    pub classification: Option<Var>,
}

fn rows<T: Real>(tape: &Tape<T>, v: Var, op: &'static str) -> Result<usize> {
    match tape.shape(v) {
        [r, _] => Ok(*r),
        s => Err(Error::dim(op, format!("expected a matrix, got {s:?}"))),
    }
}

fn same_shape<T: Real>(tape: &Tape<T>, a: Var, b: Var, op: &'static str) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::dim(
            op,
            format!("{:?} vs {:?}", tape.shape(a), tape.shape(b)),
        ));
    }
    Ok(())
}

/// `mean_batch ½·Σ_d (exp(lv) + μ² − 1 − lv)`.
pub fn kl_divergence<T: Real>(tape: &mut Tape<T>, mu: Var, log_var: Var) -> Result<Var> {
    same_shape(tape, mu, log_var, "kl_divergence")?;
    let batch = rows(tape, mu, "kl_divergence")?;
    let numel = tape.value(mu).numel();
    let var = tape.exp(log_var);
    let mu_sq = tape.mul(mu, mu)?;
    let s = tape.add(var, mu_sq)?;
    let s = tape.sub(s, log_var)?;
    let total = tape.sum(s);
    let total = tape.add_scalar(total, -(numel as f64));
    Ok(tape.scale(total, 0.5 / batch as f64))
}

/// Bernoulli negative log-likelihood summed over pixels, averaged over rows.
pub fn reconstruction_nll<T: Real>(tape: &mut Tape<T>, x: Var, x_recon: Var) -> Result<Var> {
    same_shape(tape, x, x_recon, "reconstruction_nll")?;
    let batch = rows(tape, x, "reconstruction_nll")?;
    let r = tape.clamp(x_recon, RECON_CLAMP, 1.0 - RECON_CLAMP);
    let log_r = tape.log(r)?;
    let neg_r = tape.scale(r, -1.0);
    let one_minus_r = tape.add_scalar(neg_r, 1.0);
    let log_one_minus_r = tape.log(one_minus_r)?;
    let neg_x = tape.scale(x, -1.0);
    let one_minus_x = tape.add_scalar(neg_x, 1.0);
    let a = tape.mul(x, log_r)?;
    let b = tape.mul(one_minus_x, log_one_minus_r)?;
    let ll = tape.add(a, b)?;
    let total = tape.sum(ll);
    Ok(tape.scale(total, -1.0 / batch as f64))
}

/// Per-row Bernoulli NLL computed in double precision, off the tape.
pub fn bernoulli_nll_rows<T: Real>(x: &[T], x_recon: &[T], dim: usize) -> Vec<f64> {
    let lo = RECON_CLAMP;
    let hi = 1.0 - RECON_CLAMP;
    x.chunks(dim)
        .zip(x_recon.chunks(dim))
        .map(|(xs, rs)| {
            xs.iter()
                .zip(rs)
                .map(|(&xv, &rv)| {
                    let xv = xv.to_f64_lossy();
                    let rv = rv.to_f64_lossy().clamp(lo, hi);
                    -(xv * rv.ln() + (1.0 - xv) * (1.0 - rv).ln())
                })
                .sum()
        })
        .collect()
}

/// `−(α / #labeled)·Σ_labeled log π[y]`, exactly zero when nothing is labeled.
///
/// Takes log-probabilities rather than π so the log never sees an underflowed zero.
pub fn classification_loss<T: Real>(
    tape: &mut Tape<T>,
    log_pi: Var,
    labels: &[Option<usize>],
    alpha_weight: f64,
) -> Result<Var> {
    let (batch, classes) = tape.value(log_pi).dims2()?;
    if labels.len() != batch {
        return Err(Error::dim(
            "classification_loss",
            format!("{} labels for {batch} rows", labels.len()),
        ));
    }
    let mut picks = Vec::new();
    for (i, label) in labels.iter().enumerate() {
        if let Some(y) = *label {
            if y >= classes {
                return Err(Error::Data(format!(
                    "label {y} at row {i} is out of range for {classes} classes"
                )));
            }
            picks.push((i, y));
        }
    }
    if picks.is_empty() {
        return Ok(tape.constant(Tensor::scalar(T::zero())));
    }
    let labeled = picks.len();
    let picked = tape.gather(log_pi, picks)?;
    let total = tape.sum(picked);
    Ok(tape.scale(total, -alpha_weight / labeled as f64))
}

/// The variant's training objective.
///
/// SS: recon + β·KL + classification. EU: recon + β·KL. ES: classification.
pub fn total_loss<T: Real>(
    tape: &mut Tape<T>,
    variant: Variant,
    x: Var,
    labels: &[Option<usize>],
    outputs: &ForwardOutputs,
    weights: LossWeights,
) -> Result<LossParts> {
    let missing = |what| Error::Variant {
        variant: variant.code(),
        what,
    };
    let elbo = if variant.has_decoder() {
        let x_recon = outputs.x_recon.ok_or_else(|| missing("decoder"))?;
        let mu = outputs.mu.ok_or_else(|| missing("latent mean head"))?;
        let log_var = outputs.log_var.ok_or_else(|| missing("latent log-variance head"))?;
        let recon = reconstruction_nll(tape, x, x_recon)?;
        let kl = kl_divergence(tape, mu, log_var)?;
        Some((recon, kl))
    } else {
        None
    };
    let classification = if variant.has_class_head() {
        let log_pi = outputs.log_pi.ok_or_else(|| missing("class head"))?;
        Some(classification_loss(tape, log_pi, labels, weights.alpha_weight)?)
    } else {
        None
    };
    let total = match (elbo, classification) {
        (Some((recon, kl)), cls) => {
            let weighted_kl = tape.scale(kl, weights.beta_norm);
            let elbo = tape.add(recon, weighted_kl)?;
            match cls {
                Some(c) => tape.add(elbo, c)?,
                None => elbo,
            }
        }
        (None, Some(c)) => c,
        (None, None) => return Err(Error::Contract("variant has no loss terms".into())),
    };
    Ok(LossParts {
        total,
        reconstruction: elbo.map(|e| e.0),
        kl: elbo.map(|e| e.1),
        classification,
    })
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use super::*;

    fn constant(tape: &mut Tape<f64>, shape: [usize; 2], data: &[f64]) -> Var {
        tape.constant(Tensor::from_f64(shape, data).unwrap())
    }

    fn scalar(tape: &Tape<f64>, v: Var) -> f64 {
        tape.value(v).item().unwrap()
    }

    #[test]
    fn kl_hand_values() {
        let mut tape = Tape::new();
        let mu = constant(&mut tape, [1, 2], &[0.0, 0.0]);
        let lv = constant(&mut tape, [1, 2], &[0.0, 0.0]);
        let kl = kl_divergence(&mut tape, mu, lv).unwrap();
        assert_eq!(scalar(&tape, kl), 0.0);
        let mu = constant(&mut tape, [1, 2], &[1.0, 0.0]);
        let kl = kl_divergence(&mut tape, mu, lv).unwrap();
        assert_relative_eq!(scalar(&tape, kl), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        // E_q[log q(z) − log p(z)] estimated from samples of q.
        let mu = [0.7, -1.2];
        let lv = [-0.4, 0.6];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            for d in 0..2 {
                let sigma = (0.5f64 * lv[d]).exp();
                let e: f64 = rng.sample(StandardNormal);
                let z = mu[d] + sigma * e;
                let log_q = -0.5 * e * e - sigma.ln();
                let log_p = -0.5 * z * z;
                acc += log_q - log_p;
            }
        }
        let estimate = acc / n as f64;
        let mut tape = Tape::new();
        let m = constant(&mut tape, [1, 2], &mu);
        let l = constant(&mut tape, [1, 2], &lv);
        let kl = kl_divergence(&mut tape, m, l).unwrap();
        let exact = scalar(&tape, kl);
        assert!((estimate - exact).abs() / exact < 0.01, "{estimate} vs {exact}");
    }

    #[test]
    fn reconstruction_hand_values() {
        let mut tape = Tape::new();
        let half = tape.constant(Tensor::filled([1, 784], 0.5));
        let nll = reconstruction_nll(&mut tape, half, half).unwrap();
        assert_relative_eq!(scalar(&tape, nll), 784.0 * 2f64.ln(), epsilon = 1e-9);
        assert_relative_eq!(scalar(&tape, nll), 543.43, epsilon = 0.01);

        let bits: Vec<f64> = (0..784).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let x = constant(&mut tape, [1, 784], &bits);
        let nll = reconstruction_nll(&mut tape, x, x).unwrap();
        let expected = -784.0 * (1.0 - 1e-7f64).ln();
        assert_relative_eq!(scalar(&tape, nll), expected, max_relative = 1e-6);
        assert!(scalar(&tape, nll) < 1e-4);
    }

    #[test]
    fn reconstruction_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..30).map(|_| rng.gen()).collect();
        let r: Vec<f64> = (0..30).map(|_| rng.gen_range(0.01..0.99)).collect();
        let mut expected = 0.0;
        for (a, b) in x.iter().zip(&r) {
            expected -= a * b.ln() + (1.0 - a) * (1.0 - b).ln();
        }
        expected /= 3.0;
        let mut tape = Tape::new();
        let xv = constant(&mut tape, [3, 10], &x);
        let rv = constant(&mut tape, [3, 10], &r);
        let nll = reconstruction_nll(&mut tape, xv, rv).unwrap();
        assert_relative_eq!(scalar(&tape, nll), expected, epsilon = 1e-12);
        let rows = bernoulli_nll_rows(&x, &r, 10);
        assert_relative_eq!(rows.iter().sum::<f64>() / 3.0, expected, epsilon = 1e-12);
    }

    fn log_pi(tape: &mut Tape<f64>, probs: &[f64], classes: usize) -> Var {
        let logs: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        constant(tape, [probs.len() / classes, classes], &logs)
    }

    #[test]
    fn classification_hand_values() {
        let mut tape = Tape::new();
        let lp = log_pi(&mut tape, &[0.5, 0.5, 0.25, 0.75, 0.1, 0.9, 0.3, 0.7], 2);
        let none = classification_loss(&mut tape, lp, &[None; 4], 1.0).unwrap();
        assert_eq!(scalar(&tape, none), 0.0);
        let two = classification_loss(&mut tape, lp, &[Some(0), Some(0), None, None], 1.0).unwrap();
        let expected = -(0.5f64.ln() + 0.25f64.ln()) / 2.0;
        assert_relative_eq!(scalar(&tape, two), expected, epsilon = 1e-12);
        assert_relative_eq!(scalar(&tape, two), 1.0397, epsilon = 1e-4);

        let sure = log_pi(&mut tape, &[1.0, 1e-300], 2);
        let perfect = classification_loss(&mut tape, sure, &[Some(0)], 1.0).unwrap();
        assert_eq!(scalar(&tape, perfect), 0.0);

        assert!(matches!(
            classification_loss(&mut tape, lp, &[Some(2), None, None, None], 1.0),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn classification_ignores_appended_unlabeled_rows() {
        let mut tape = Tape::new();
        let lp = log_pi(&mut tape, &[0.2, 0.8, 0.6, 0.4], 2);
        let a = classification_loss(&mut tape, lp, &[Some(1), Some(0)], 1.0).unwrap();
        let lp2 = log_pi(&mut tape, &[0.2, 0.8, 0.6, 0.4, 0.5, 0.5, 0.9, 0.1], 2);
        let b = classification_loss(&mut tape, lp2, &[Some(1), Some(0), None, None], 1.0).unwrap();
        assert_eq!(scalar(&tape, a), scalar(&tape, b));
    }

    fn outputs(tape: &mut Tape<f64>, lv: f64) -> (Var, ForwardOutputs) {
        let x = constant(tape, [2, 3], &[0.0, 1.0, 0.5, 1.0, 0.2, 0.0]);
        let out = ForwardOutputs {
            log_pi: Some(log_pi(tape, &[0.3, 0.7, 0.6, 0.4], 2)),
            pi: None,
            mu: Some(constant(tape, [2, 2], &[0.4, -0.1, 1.5, 0.2])),
            log_var: Some(constant(tape, [2, 2], &[lv, 0.1, -0.3, lv])),
            z: None,
            x_recon: Some(constant(tape, [2, 3], &[0.1, 0.8, 0.5, 0.6, 0.3, 0.2])),
        };
        (x, out)
    }

    #[test]
    fn parts_sum_to_total() {
        let mut tape = Tape::new();
        let (x, out) = outputs(&mut tape, 0.2);
        let w = LossWeights {
            alpha_weight: 2.0,
            beta_norm: 0.3,
        };
        let parts =
            total_loss(&mut tape, Variant::SemiSupervised, x, &[Some(1), None], &out, w).unwrap();
        let recon = scalar(&tape, parts.reconstruction.unwrap());
        let kl = scalar(&tape, parts.kl.unwrap());
        let cls = scalar(&tape, parts.classification.unwrap());
        assert_eq!(scalar(&tape, parts.total), recon + 0.3 * kl + cls);

        let unlabeled = total_loss(&mut tape, Variant::SemiSupervised, x, &[None, None], &out, w).unwrap();
        assert_eq!(scalar(&tape, unlabeled.total), recon + 0.3 * kl);

        let es = total_loss(&mut tape, Variant::Supervised, x, &[Some(1), None], &out, w).unwrap();
        assert_eq!(scalar(&tape, es.total), cls);
        assert!(es.kl.is_none());
    }

    #[test]
    fn zero_beta_ignores_latent_statistics() {
        let w = LossWeights {
            alpha_weight: 1.0,
            beta_norm: 0.0,
        };
        let totals: Vec<f64> = [0.0, 3.0, -5.0]
            .iter()
            .map(|&lv| {
                let mut tape = Tape::new();
                let (x, out) = outputs(&mut tape, lv);
                let parts = total_loss(&mut tape, Variant::Unsupervised, x, &[None, None], &out, w).unwrap();
                scalar(&tape, parts.total)
            })
            .collect();
        assert_eq!(totals[0], totals[1]);
        assert_eq!(totals[0], totals[2]);
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(vals in prop::collection::vec(-5.0f64..5.0, 8)) {
            let mut tape = Tape::new();
            let mu = constant(&mut tape, [2, 2], &vals[..4]);
            let lv = constant(&mut tape, [2, 2], &vals[4..]);
            let kl = kl_divergence(&mut tape, mu, lv).unwrap();
            prop_assert!(scalar(&tape, kl) >= -1e-12);
        }

        #[test]
        fn kl_vanishes_only_at_standard_normal(m in -3.0f64..3.0, l in -3.0f64..3.0) {
            prop_assume!(m.abs() > 1e-3 || l.abs() > 1e-3);
            let mut tape = Tape::new();
            let mu = constant(&mut tape, [1, 1], &[m]);
            let lv = constant(&mut tape, [1, 1], &[l]);
            let kl = kl_divergence(&mut tape, mu, lv).unwrap();
            prop_assert!(scalar(&tape, kl) > 0.0);
        }
    }
}
