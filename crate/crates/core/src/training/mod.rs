//! Seeded training loop, run logging and classification metrics.

mod config;
mod denormals;
mod runlog;

use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{epoch_batches, BatchPlan, LabelPolicy, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::loss::total_loss;
use crate::model::{checkpoint, ClassConditioning, LatentSampling, ModelSpec, SsVaeModel, Variant};
use crate::tensor::{RmsPropState, Tape, Tensor};

pub use config::TrainConfig;
pub use runlog::{timing_path, EpochRecord, RunLog};

const INIT_STREAM: u64 = 0;
const SAMPLER_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// Independent generator `stream` derived from `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A freshly initialized model drawn from the run's initialization stream.
pub fn init_model(spec: ModelSpec, seed: u64) -> Result<SsVaeModel<f32>> {
    SsVaeModel::new(spec, &mut rng_stream(seed, INIT_STREAM))
}

/// Loss values of one optimizer step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub reconstruction: Option<f64>,
    pub kl: Option<f64>,
    pub classification: Option<f64>,
    pub total: f64,
    pub grad_norm: f64,
}

/// Model, optimizer state and noise stream of a run in progress.
pub struct Trainer {
    model: SsVaeModel<f32>,
    optimizer: RmsPropState<f32>,
    noise: ChaCha8Rng,
    cfg: TrainConfig,
}

impl Trainer {
    pub fn new(model: SsVaeModel<f32>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if model.variant() != cfg.variant {
            return Err(Error::Argument(format!(
                "model is {} but the config asks for {}",
                model.variant(),
                cfg.variant
            )));
        }
        Ok(Trainer {
            optimizer: RmsPropState::new(model.params(), cfg.learning_rate),
            noise: rng_stream(cfg.seed, NOISE_STREAM),
            model,
            cfg,
        })
    }

    pub fn model(&self) -> &SsVaeModel<f32> {
        &self.model
    }

    pub fn into_model(self) -> SsVaeModel<f32> {
        self.model
    }

    /// One optimizer step on rows `indices` of `ds`.
    ///
    /// The supervised variant drops unlabeled rows first and skips the step
    /// (returning `None`) when none remain.
    pub fn step(
        &mut self,
        ds: &LabeledDataset,
        indices: &[usize],
        epoch: usize,
        step: usize,
    ) -> Result<Option<StepLosses>> {
        let _flush = denormals::FlushDenormals::new();
        let variant = self.model.variant();
        let rows: Vec<usize> = if variant == Variant::Supervised {
            indices
                .iter()
                .copied()
                .filter(|&i| ds.labels()[i].is_some())
                .collect()
        } else {
            indices.to_vec()
        };
        if rows.is_empty() {
            return Ok(None);
        }
        let labels = ds.gather_labels(&rows);
        let x = Tensor::new([rows.len(), ds.input_dim()], ds.gather_features(&rows))?;

        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape);
        let xv = tape.constant(x);
        let conditioning = if self.cfg.teacher_forcing {
            ClassConditioning::TeacherForced(&labels)
        } else {
            ClassConditioning::Predicted
        };
        let out = self.model.forward(
            &mut tape,
            &bound,
            xv,
            LatentSampling::Noise(&mut self.noise),
            conditioning,
        )?;
        let parts = total_loss(&mut tape, variant, xv, &labels, &out, self.cfg.weights())?;

        let read = |v: Option<crate::tensor::Var>, part: &'static str| -> Result<Option<f64>> {
            v.map(|v| {
                let value = f64::from(tape.value(v).item()?);
                if value.is_finite() {
                    Ok(value)
                } else {
                    Err(Error::NonFinite { part, epoch, step })
                }
            })
            .transpose()
        };
        let reconstruction = read(parts.reconstruction, "reconstruction")?;
        let kl = read(parts.kl, "kl")?;
        let classification = read(parts.classification, "classification")?;
        let total = read(Some(parts.total), "total")?.unwrap_or_default();

        tape.backward(parts.total)?;
        let mut grads: Vec<Tensor<f32>> = bound
            .vars()
            .iter()
            .zip(self.model.params())
            .map(|(&v, p)| {
                tape.grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.shape().to_vec()))
            })
            .collect();
        let grad_norm = grads.iter().map(Tensor::sum_sq).sum::<f64>().sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite {
                part: "gradient",
                epoch,
                step,
            });
        }
        if grad_norm > self.cfg.clip_norm {
            let scale = (self.cfg.clip_norm / grad_norm) as f32;
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
        }
        self.optimizer.step(self.model.params_mut(), &grads)?;
        Ok(Some(StepLosses {
            reconstruction,
            kl,
            classification,
            total,
            grad_norm,
        }))
    }
}

/// Batch plan actually used for `cfg`; the unsupervised variant never sees
/// labels, so it always gets plain shuffled batches.
pub fn batch_plan(cfg: &TrainConfig) -> BatchPlan {
    BatchPlan {
        batch_size: cfg.batch_size,
        policy: if cfg.variant == Variant::Unsupervised {
            LabelPolicy::Natural
        } else {
            cfg.policy
        },
        seed: rng_stream(cfg.seed, SAMPLER_STREAM).next_u64(),
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Trains `model` for `cfg.epochs` epochs, then writes the checkpoint if
/// `cfg.checkpoint_path` is set.
pub fn train(
    model: SsVaeModel<f32>,
    ds: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(SsVaeModel<f32>, RunLog)> {
    if ds.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if ds.input_dim() != model.spec().input_dim {
        return Err(Error::Data(format!(
            "dataset rows have {} values, model expects {}",
            ds.input_dim(),
            model.spec().input_dim
        )));
    }
    if model.variant().has_class_head() && ds.class_count() > model.spec().num_classes {
        return Err(Error::Data(format!(
            "dataset has {} classes, model has {}",
            ds.class_count(),
            model.spec().num_classes
        )));
    }
    if model.variant() == Variant::Supervised && ds.labeled_count() == 0 {
        return Err(Error::Data("supervised training needs labeled samples".into()));
    }
    let plan = batch_plan(cfg);
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let (mut recon, mut kl, mut cls, mut total) = (vec![], vec![], vec![], vec![]);
        for (step, batch) in epoch_batches(ds.labels(), &plan, epoch as u64).iter().enumerate() {
            if let Some(l) = trainer.step(ds, batch, epoch, step)? {
                recon.extend(l.reconstruction);
                kl.extend(l.kl);
                cls.extend(l.classification);
                total.push(l.total);
            }
        }
        let record = EpochRecord {
            epoch,
            reconstruction: mean(&recon),
            kl: mean(&kl),
            classification: mean(&cls),
            total: mean(&total).unwrap_or(f64::NAN),
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "{} epoch {epoch}/{}: total {:.4} ({:.1}s)",
            cfg.variant,
            cfg.epochs,
            record.total,
            record.seconds
        );
        records.push(record);
    }
    let model = trainer.into_model();
    if let Some(path) = &cfg.checkpoint_path {
        checkpoint::save(&model, path)?;
    }
    Ok((
        model,
        RunLog {
            seed: cfg.seed,
            config_hash: cfg.hash(),
            records,
        },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub log_loss: f64,
}

/// Lower bound on π before taking logs in the log loss.
pub const LOG_LOSS_FLOOR: f64 = 1e-15;

/// Accuracy and log loss from class probabilities (`n×classes`) and labels.
pub fn classification_metrics(
    probs: &[f32],
    classes: usize,
    labels: &[Option<usize>],
) -> Result<ClassificationMetrics> {
    let (mut hits, mut nll, mut n) = (0usize, 0.0f64, 0usize);
    for (row, label) in probs.chunks(classes).zip(labels) {
        let Some(y) = *label else { continue };
        if y >= classes {
            return Err(Error::Data(format!("label {y} out of range for {classes} classes")));
        }
        let argmax = row
            .iter()
            .enumerate()
            .fold(0, |best, (i, &p)| if p > row[best] { i } else { best });
        hits += usize::from(argmax == y);
        nll -= f64::from(row[y]).max(LOG_LOSS_FLOOR).ln();
        n += 1;
    }
    if n == 0 {
        return Err(Error::Data("no labeled samples to evaluate".into()));
    }
    Ok(ClassificationMetrics {
        accuracy: hits as f64 / n as f64,
        log_loss: nll / n as f64,
    })
}

/// Metrics of the model's π head on the labeled rows of `ds`.
pub fn evaluate_classification(
    model: &SsVaeModel<f32>,
    ds: &LabeledDataset,
) -> Result<ClassificationMetrics> {
    if !model.variant().has_class_head() {
        return Err(Error::Variant {
            variant: model.variant().code(),
            what: "class head",
        });
    }
    let probs = model.predict_proba(ds.features())?;
    classification_metrics(&probs, model.spec().num_classes, ds.labels())
}
