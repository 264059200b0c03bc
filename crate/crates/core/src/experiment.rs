//! Run recipes shared by the command line and the acceptance suite.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{AnomalySplit, FactorDataset, LabeledDataset};
use crate::error::{Error, Result};
use crate::evaluation::{beta_vae_score, evaluate_anomaly, AnomalyReport, BetaVaeConfig};
use crate::model::{ModelSpec, SsVaeModel, Variant};
use crate::pgm::Gray;
use crate::training::{
    evaluate_classification, init_model, train, ClassificationMetrics, RunLog, TrainConfig,
};

/// Hidden width of the reduced dense model used by the fast suite.
pub const FAST_WIDTH: usize = 256;

/// Dense model for `input_dim`-pixel inputs and `classes` classes; `width`
/// overrides the 1024-unit hidden layers.
pub fn dense_spec(
    variant: Variant,
    input_dim: usize,
    classes: usize,
    width: Option<usize>,
) -> ModelSpec {
    let spec = ModelSpec {
        variant,
        input_dim,
        num_classes: classes,
        ..ModelSpec::default()
    };
    match width {
        Some(w) => spec.with_hidden_width(w),
        None => spec,
    }
}

/// Epoch count used when none is given: 20 for the classifier-only variant,
/// 10 otherwise.
pub fn default_epochs(variant: Variant) -> usize {
    if variant == Variant::Supervised {
        20
    } else {
        10
    }
}

pub struct TrainedRun {
    pub model: SsVaeModel<f32>,
    pub log: RunLog,
}

/// Keeps `labels` labels (all when `None`) chosen by `label_seed`, then trains.
pub fn train_masked(
    ds: &LabeledDataset,
    labels: Option<usize>,
    label_seed: u64,
    spec: ModelSpec,
    cfg: &TrainConfig,
) -> Result<TrainedRun> {
    let masked = match labels {
        Some(n) => ds.mask_labels(n, label_seed)?,
        None => ds.clone(),
    };
    let model = init_model(spec, cfg.seed)?;
    let (model, log) = train(model, &masked, cfg)?;
    Ok(TrainedRun { model, log })
}

pub fn run_classification(
    train_ds: &LabeledDataset,
    test_ds: &LabeledDataset,
    labels: Option<usize>,
    label_seed: u64,
    spec: ModelSpec,
    cfg: &TrainConfig,
) -> Result<(TrainedRun, ClassificationMetrics)> {
    let run = train_masked(train_ds, labels, label_seed, spec, cfg)?;
    let metrics = evaluate_classification(&run.model, test_ds)?;
    Ok((run, metrics))
}

/// Trains on the normal classes of `split` with a `fraction` of their labels
/// kept, then scores the held-out test rows.
pub fn run_anomaly(
    split: &AnomalySplit,
    fraction: f64,
    label_seed: u64,
    spec: ModelSpec,
    cfg: &TrainConfig,
) -> Result<(TrainedRun, AnomalyReport)> {
    let ds = split.train.mask_fraction(fraction, label_seed)?;
    let model = init_model(spec, cfg.seed)?;
    let (model, log) = train(model, &ds, cfg)?;
    let report = evaluate_anomaly(&model, split)?;
    Ok((TrainedRun { model, log }, report))
}

/// Shape of the disentanglement experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct DisentangleSetup {
    /// Factor whose value labels the class head.
    pub factor: usize,
    pub latent_dim: usize,
    pub width: usize,
    pub beta_vae: BetaVaeConfig,
}

impl Default for DisentangleSetup {
    fn default() -> Self {
        DisentangleSetup {
            factor: 0,
            latent_dim: 2,
            width: 256,
            beta_vae: BetaVaeConfig::default(),
        }
    }
}

impl DisentangleSetup {
    /// Semi-supervised model whose class head is not fed to the decoder.
    pub fn spec(&self, fds: &FactorDataset) -> ModelSpec {
        ModelSpec {
            variant: Variant::SemiSupervised,
            input_dim: fds.input_dim(),
            encoder_widths: vec![self.width, self.width],
            latent_dim: self.latent_dim,
            num_classes: fds.cardinalities()[self.factor],
            decoder_widths: vec![self.width, self.width],
            pi_to_decoder: false,
        }
    }

    /// Trains with `labels` labelled images (dropping all unlabelled ones
    /// when `labeled_only`) and returns the betaVAE score of the latent means.
    pub fn run(
        &self,
        fds: &FactorDataset,
        labels: usize,
        labeled_only: bool,
        cfg: &TrainConfig,
    ) -> Result<f64> {
        let full = fds.labeled_by(self.factor)?;
        let mut ds = full.mask_labels(labels, cfg.seed)?;
        if labeled_only {
            if labels == 0 {
                return Err(Error::Argument(
                    "a labeled-only run needs at least one label".into(),
                ));
            }
            ds = ds.subset(&ds.labeled_indices());
        }
        let model = init_model(self.spec(fds), cfg.seed)?;
        let (model, _) = train(model, &ds, cfg)?;
        beta_vae_score(&model, fds, &self.beta_vae, cfg.seed)
    }
}

/// Where generated latent codes come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentLayout {
    /// Evenly spaced over `[-2, 2]²`; needs a two-dimensional latent space.
    Grid,
    /// Standard normal draws.
    Normal,
}

/// `g×g` latent codes, row-major over the grid.
pub fn latent_codes(latent_dim: usize, g: usize, layout: LatentLayout, seed: u64) -> Result<Vec<f32>> {
    match layout {
        LatentLayout::Grid => {
            if latent_dim != 2 {
                return Err(Error::Argument(format!(
                    "a latent grid needs latent_dim 2, got {latent_dim}"
                )));
            }
            let at = |i: usize| {
                if g == 1 {
                    0.0
                } else {
                    -2.0 + 4.0 * i as f32 / (g - 1) as f32
                }
            };
            Ok((0..g * g).flat_map(|k| [at(k % g), -at(k / g)]).collect())
        }
        LatentLayout::Normal => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok((0..g * g * latent_dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        }
    }
}

/// Decodes the same `g×g` latent codes once per class; element `k` holds
/// the `g²` images conditioned on class `k`.
pub fn generate_per_class(
    model: &SsVaeModel<f32>,
    g: usize,
    layout: LatentLayout,
    seed: u64,
) -> Result<Vec<Vec<f32>>> {
    let spec = model.spec();
    if !spec.decoder_takes_pi() {
        return Err(Error::Variant {
            variant: model.variant().code(),
            what: "class input to the decoder",
        });
    }
    let z = latent_codes(spec.latent_dim, g, layout, seed)?;
    let c = spec.num_classes;
    (0..c)
        .map(|k| {
            let onehot: Vec<f32> = (0..g * g)
                .flat_map(|_| (0..c).map(move |j| if j == k { 1.0 } else { 0.0 }))
                .collect();
            model.generate(&onehot, &z)
        })
        .collect()
}

/// Side length of square images with `input_dim` pixels.
pub fn image_side(input_dim: usize) -> Result<usize> {
    let side = (input_dim as f64).sqrt().round() as usize;
    if side * side != input_dim {
        return Err(Error::Argument(format!("{input_dim} pixels are not a square image")));
    }
    Ok(side)
}

/// One `g·side`-square graymap per class, plus all of them side by side.
pub fn class_grids(per_class: &[Vec<f32>], side: usize, g: usize) -> Result<(Vec<Gray>, Gray)> {
    let grids = per_class
        .iter()
        .map(|imgs| Gray::tiled(imgs, side, g))
        .collect::<Result<Vec<_>>>()?;
    let combined = Gray::hconcat(&grids)?;
    Ok((grids, combined))
}

/// How the model's own classifier labels one class's generated images.
#[derive(Clone, Debug, PartialEq)]
pub struct GridVerdict {
    pub class: usize,
    /// Most frequent predicted class (lowest index on ties).
    pub predicted: usize,
    /// Share of images predicted as `class`.
    pub agreement: f64,
}

impl GridVerdict {
    pub fn consistent(&self) -> bool {
        self.predicted == self.class
    }
}

pub fn self_consistency(model: &SsVaeModel<f32>, per_class: &[Vec<f32>]) -> Result<Vec<GridVerdict>> {
    let c = model.spec().num_classes;
    per_class
        .iter()
        .enumerate()
        .map(|(class, imgs)| {
            let probs = model.predict_proba(imgs)?;
            let mut votes = vec![0usize; c];
            for row in probs.chunks(c) {
                let best = row
                    .iter()
                    .enumerate()
                    .fold(0, |b, (i, &p)| if p > row[b] { i } else { b });
                votes[best] += 1;
            }
            let total: usize = votes.iter().sum();
            let predicted = votes
                .iter()
                .enumerate()
                .fold(0, |b, (i, &v)| if v > votes[b] { i } else { b });
            Ok(GridVerdict {
                class,
                predicted,
                agreement: votes[class] as f64 / total as f64,
            })
        })
        .collect()
}
