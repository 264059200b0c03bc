use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::auc;
use crate::data::{AnomalySplit, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::loss::bernoulli_nll_rows;
use crate::model::{ClassConditioning, LatentSampling, SsVaeModel};
use crate::tensor::{Tape, Tensor};

const CHUNK: usize = 1000;

/// Per-sample reconstruction NLL; higher means more anomalous.
///
/// With `samples <= 1` the latent code is `z = μ`. Otherwise the score is
/// averaged over `samples` reparameterized draws seeded by `seed`.
pub fn anomaly_scores(
    model: &SsVaeModel<f32>,
    x: &[f32],
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if !model.variant().has_decoder() {
        return Err(Error::Variant {
            variant: model.variant().code(),
            what: "decoder",
        });
    }
    let d = model.spec().input_dim;
    if samples <= 1 {
        let recon = model.reconstruct(x)?;
        return Ok(bernoulli_nll_rows(x, &recon, d));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = vec![0.0; x.len() / d];
    for _ in 0..samples {
        let mut row = 0;
        for chunk in x.chunks(CHUNK * d) {
            let mut tape = Tape::new();
            let bound = model.bind_frozen(&mut tape);
            let xv = tape.constant(Tensor::new([chunk.len() / d, d], chunk.to_vec())?);
            let out = model.forward(
                &mut tape,
                &bound,
                xv,
                LatentSampling::Noise(&mut rng),
                ClassConditioning::Predicted,
            )?;
            let recon = tape.value(out.x_recon.expect("variant has a decoder")).data();
            for s in bernoulli_nll_rows(chunk, recon, d) {
                scores[row] += s / samples as f64;
                row += 1;
            }
        }
    }
    Ok(scores)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreSummary {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl ScoreSummary {
    pub fn of(scores: &[f64]) -> Self {
        let mut sorted = scores.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n == 0 {
            f64::NAN
        } else if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        ScoreSummary {
            mean: sorted.iter().sum::<f64>() / n as f64,
            median,
            min: sorted.first().copied().unwrap_or(f64::NAN),
            max: sorted.last().copied().unwrap_or(f64::NAN),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnomalyReport {
    pub anomalous_class: usize,
    pub auc: f64,
    pub n_normal: usize,
    pub n_anomalous: usize,
    pub normal: ScoreSummary,
    pub anomalous: ScoreSummary,
}

pub fn anomaly_report(
    model: &SsVaeModel<f32>,
    anomalous_class: usize,
    normal: &LabeledDataset,
    anomalous: &LabeledDataset,
    samples: usize,
    seed: u64,
) -> Result<AnomalyReport> {
    let neg = anomaly_scores(model, normal.features(), samples, seed)?;
    let pos = anomaly_scores(model, anomalous.features(), samples, seed)?;
    Ok(AnomalyReport {
        anomalous_class,
        auc: auc(&neg, &pos)?,
        n_normal: neg.len(),
        n_anomalous: pos.len(),
        normal: ScoreSummary::of(&neg),
        anomalous: ScoreSummary::of(&pos),
    })
}

/// Deterministic report on the test side of `split`.
pub fn evaluate_anomaly(model: &SsVaeModel<f32>, split: &AnomalySplit) -> Result<AnomalyReport> {
    anomaly_report(
        model,
        split.anomalous_class,
        &split.test_normal,
        &split.test_anomalous,
        1,
        0,
    )
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;
    use crate::model::{ModelSpec, Variant};

    fn spec(variant: Variant) -> ModelSpec {
        ModelSpec {
            variant,
            input_dim: 784,
            encoder_widths: vec![3],
            latent_dim: 2,
            num_classes: 2,
            decoder_widths: vec![3],
            pi_to_decoder: true,
        }
    }

    #[test]
    fn coin_flip_reconstruction_scores() {
        let model = SsVaeModel::<f32>::zeroed(spec(Variant::Unsupervised)).unwrap();
        let x: Vec<f32> = (0..2 * 784).map(|i| (i % 2) as f32).collect();
        let s = anomaly_scores(&model, &x, 1, 0).unwrap();
        for v in &s {
            assert_relative_eq!(*v, 784.0 * 2f64.ln(), max_relative = 1e-6);
        }
        assert_eq!(s, anomaly_scores(&model, &x, 1, 0).unwrap());
        // Zero log-variance heads still give 0.5 outputs with sampled z: all weights are zero.
        let sampled = anomaly_scores(&model, &x, 3, 1).unwrap();
        assert_relative_eq!(sampled[0], s[0], max_relative = 1e-6);
    }

    #[test]
    fn perfect_reconstruction_scores_near_zero() {
        let x = vec![0.0f32; 784];
        let recon = vec![0.0f32; 784];
        let s = bernoulli_nll_rows(&x, &recon, 784);
        assert!(s[0] < 1e-4 && s[0] >= 0.0);
    }

    #[test]
    fn supervised_variant_rejected() {
        let model = SsVaeModel::<f32>::zeroed(spec(Variant::Supervised)).unwrap();
        assert!(matches!(
            anomaly_scores(&model, &[0.0; 784], 1, 0),
            Err(Error::Variant { .. })
        ));
    }

    #[test]
    fn summary_statistics() {
        let s = ScoreSummary::of(&[3.0, 1.0, 2.0, 10.0]);
        assert_eq!((s.min, s.median, s.max, s.mean), (1.0, 2.5, 10.0, 4.0));
    }
}
