//! Datasets, label masking, anomaly splits and batch sampling.

pub mod idx;
mod sampler;
pub mod synth;

use std::sync::Arc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use idx::{load_idx, MnistFiles};
pub use sampler::{epoch_batches, BatchPlan, LabelPolicy};
pub use synth::{FactorDataset, SynthConfig};

/// Row-major features in `[0, 1]` with an optional class label per row.
///
/// Features sit behind an `Arc`, so relabelled views share storage.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    features: Arc<Vec<f32>>,
    labels: Vec<Option<usize>>,
    input_dim: usize,
    class_count: usize,
}

impl LabeledDataset {
    pub fn new(
        features: Vec<f32>,
        labels: Vec<Option<usize>>,
        input_dim: usize,
        class_count: usize,
    ) -> Result<Self> {
        if input_dim == 0 || features.len() != labels.len() * input_dim {
            return Err(Error::Data(format!(
                "{} feature values do not form {} rows of width {input_dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(v) = features.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("feature value {v} outside [0, 1]")));
        }
        Self::check_labels(&labels, class_count)?;
        Ok(LabeledDataset {
            features: Arc::new(features),
            labels,
            input_dim,
            class_count,
        })
    }

    fn check_labels(labels: &[Option<usize>], class_count: usize) -> Result<()> {
        match labels.iter().flatten().find(|&&y| y >= class_count) {
            Some(y) => Err(Error::Data(format!(
                "label {y} out of range for {class_count} classes"
            ))),
            None => Ok(()),
        }
    }

    /// Same features, different labels.
    pub fn relabeled(&self, labels: Vec<Option<usize>>, class_count: usize) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Data(format!(
                "{} labels for {} rows",
                labels.len(),
                self.len()
            )));
        }
        Self::check_labels(&labels, class_count)?;
        Ok(LabeledDataset {
            features: Arc::clone(&self.features),
            labels,
            input_dim: self.input_dim,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i].is_some()).collect()
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i].is_none()).collect()
    }

    /// Feature rows for `indices`, concatenated.
    pub fn gather_features(&self, indices: &[usize]) -> Vec<f32> {
        let mut out = Vec::with_capacity(indices.len() * self.input_dim);
        for &i in indices {
            out.extend_from_slice(self.row(i));
        }
        out
    }

    pub fn gather_labels(&self, indices: &[usize]) -> Vec<Option<usize>> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// A copy holding only the rows in `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: Arc::new(self.gather_features(indices)),
            labels: self.gather_labels(indices),
            input_dim: self.input_dim,
            class_count: self.class_count,
        }
    }

    /// Keeps labels on `keep_count` uniformly chosen rows, drops the rest.
    pub fn mask_labels(&self, keep_count: usize, seed: u64) -> Result<LabeledDataset> {
        if keep_count > self.len() {
            return Err(Error::Argument(format!(
                "cannot keep {keep_count} labels out of {} samples",
                self.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels = vec![None; self.len()];
        for i in index::sample(&mut rng, self.len(), keep_count) {
            labels[i] = self.labels[i];
        }
        self.relabeled(labels, self.class_count)
    }

    /// Keeps labels on a fraction of rows, rounded to the nearest count.
    pub fn mask_fraction(&self, fraction: f64, seed: u64) -> Result<LabeledDataset> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::Argument(format!("label fraction {fraction} outside [0, 1]")));
        }
        self.mask_labels((fraction * self.len() as f64).round() as usize, seed)
    }
}

/// Train and test sets for one anomalous class.
#[derive(Clone, Debug)]
pub struct AnomalySplit {
    /// Normal-class training rows, relabelled to `0..class_count-1`.
    pub train: LabeledDataset,
    pub test_normal: LabeledDataset,
    pub test_anomalous: LabeledDataset,
    pub anomalous_class: usize,
}

impl AnomalySplit {
    /// Maps an original class to its contiguous index among normal classes.
    pub fn relabel(anomalous_class: usize, class: usize) -> Option<usize> {
        match class.cmp(&anomalous_class) {
            std::cmp::Ordering::Less => Some(class),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(class - 1),
        }
    }
}

/// Removes `anomalous_class` from training and partitions the test split.
///
/// Both inputs must be fully labeled.
pub fn make_anomaly_split(
    train: &LabeledDataset,
    test: &LabeledDataset,
    anomalous_class: usize,
) -> Result<AnomalySplit> {
    let classes = train.class_count();
    if anomalous_class >= classes {
        return Err(Error::Argument(format!(
            "anomalous class {anomalous_class} out of range for {classes} classes"
        )));
    }
    if train.labeled_count() != train.len() || test.labeled_count() != test.len() {
        return Err(Error::Data("anomaly splits need fully labeled inputs".into()));
    }
    let normal: Vec<usize> = (0..train.len())
        .filter(|&i| train.labels()[i] != Some(anomalous_class))
        .collect();
    let kept = train.subset(&normal);
    let labels = kept
        .labels()
        .iter()
        .map(|l| l.and_then(|y| AnomalySplit::relabel(anomalous_class, y)))
        .collect();
    let train_normal = kept.relabeled(labels, classes - 1)?;
    let (anom, norm): (Vec<usize>, Vec<usize>) =
        (0..test.len()).partition(|&i| test.labels()[i] == Some(anomalous_class));
    Ok(AnomalySplit {
        train: train_normal,
        test_normal: test.subset(&norm),
        test_anomalous: test.subset(&anom),
        anomalous_class,
    })
}
