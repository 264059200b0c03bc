//! The betaVAE disentanglement score.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::FactorDataset;
use crate::error::{Error, Result};
use crate::model::SsVaeModel;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaVaeConfig {
    pub batch_pair_size: usize,
    pub n_train_points: usize,
    pub n_test_points: usize,
    pub regressor_steps: usize,
    pub regressor_learning_rate: f64,
}

impl Default for BetaVaeConfig {
    fn default() -> Self {
        BetaVaeConfig {
            batch_pair_size: 64,
            n_train_points: 2048,
            n_test_points: 2048,
            regressor_steps: 2000,
            regressor_learning_rate: 0.1,
        }
    }
}

impl BetaVaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_pair_size < 2 || self.n_train_points < 1 || self.n_test_points < 1 {
            return Err(Error::Argument(format!("invalid betaVAE config {self:?}")));
        }
        Ok(())
    }
}

/// Something that maps every image of a factor dataset to a latent vector.
pub trait LatentEncoder {
    /// Row-major `len × dim` codes for all rows of `fds`.
    fn encode_all(&self, fds: &FactorDataset) -> Result<(Vec<f64>, usize)>;
}

impl LatentEncoder for SsVaeModel<f32> {
    fn encode_all(&self, fds: &FactorDataset) -> Result<(Vec<f64>, usize)> {
        let mu = self.latent_mean(&fds.features)?;
        Ok((mu.into_iter().map(f64::from).collect(), self.spec().latent_dim))
    }
}

/// Copies the ground-truth factor coordinates into the code.
pub struct OracleEncoder;

impl LatentEncoder for OracleEncoder {
    fn encode_all(&self, fds: &FactorDataset) -> Result<(Vec<f64>, usize)> {
        let codes = fds
            .factor_values
            .iter()
            .flat_map(|f| f.iter().map(|&v| v as f64))
            .collect();
        Ok((codes, 4))
    }
}

/// Maps everything to the same code.
pub struct ConstantEncoder {
    pub dim: usize,
}

impl LatentEncoder for ConstantEncoder {
    fn encode_all(&self, fds: &FactorDataset) -> Result<(Vec<f64>, usize)> {
        Ok((vec![0.0; fds.len() * self.dim], self.dim))
    }
}

/// Averaged |Δcode| over pairs sharing one factor, labelled by that factor.
fn sample_points(
    codes: &[f64],
    dim: usize,
    fds: &FactorDataset,
    factors: &[usize],
    count: usize,
    pairs: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<usize>) {
    let cards = fds.cardinalities();
    let random_factors = |rng: &mut ChaCha8Rng| -> [usize; 4] {
        let mut f = [0; 4];
        for (v, &c) in f.iter_mut().zip(&cards) {
            *v = rng.gen_range(0..c);
        }
        f
    };
    let mut xs = Vec::with_capacity(count * dim);
    let mut ys = Vec::with_capacity(count);
    for _ in 0..count {
        let label = rng.gen_range(0..factors.len());
        let k = factors[label];
        let mut acc = vec![0.0; dim];
        for _ in 0..pairs {
            let a = random_factors(rng);
            let mut b = random_factors(rng);
            b[k] = a[k];
            let (ia, ib) = (fds.index_of(a), fds.index_of(b));
            for (j, s) in acc.iter_mut().enumerate() {
                *s += (codes[ia * dim + j] - codes[ib * dim + j]).abs();
            }
        }
        xs.extend(acc.iter().map(|s| s / pairs as f64));
        ys.push(label);
    }
    (xs, ys)
}

/// Multinomial logistic regression fitted by full-batch gradient descent on
/// standardized inputs.
#[derive(Clone, Debug)]
pub struct LogisticRegression {
    dim: usize,
    classes: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    z.iter_mut().for_each(|v| *v /= total);
}

impl LogisticRegression {
    pub fn fit(
        xs: &[f64],
        ys: &[usize],
        dim: usize,
        classes: usize,
        steps: usize,
        learning_rate: f64,
    ) -> Self {
        let n = ys.len();
        let mut mean = vec![0.0; dim];
        let mut scale = vec![0.0; dim];
        for row in xs.chunks(dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n as f64;
            }
        }
        for row in xs.chunks(dim) {
            for ((s, v), m) in scale.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m) / n as f64;
            }
        }
        for s in &mut scale {
            *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
        }
        let mut model = LogisticRegression {
            dim,
            classes,
            mean,
            scale,
            weights: vec![0.0; dim * classes],
            bias: vec![0.0; classes],
        };
        let standardized: Vec<f64> = xs.chunks(dim).flat_map(|r| model.standardize(r)).collect();
        let mut probs = vec![0.0; classes];
        for _ in 0..steps {
            let mut gw = vec![0.0; dim * classes];
            let mut gb = vec![0.0; classes];
            for (row, &y) in standardized.chunks(dim).zip(ys) {
                model.logits(row, &mut probs);
                softmax_in_place(&mut probs);
                probs[y] -= 1.0;
                for (c, &p) in probs.iter().enumerate() {
                    gb[c] += p;
                    for (j, &v) in row.iter().enumerate() {
                        gw[j * classes + c] += p * v;
                    }
                }
            }
            let step = learning_rate / n as f64;
            for (w, g) in model.weights.iter_mut().zip(&gw) {
                *w -= step * g;
            }
            for (b, g) in model.bias.iter_mut().zip(&gb) {
                *b -= step * g;
            }
        }
        model
    }

    fn standardize(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    fn logits(&self, standardized: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        for (j, &v) in standardized.iter().enumerate() {
            for (c, o) in out.iter_mut().enumerate() {
                *o += v * self.weights[j * self.classes + c];
            }
        }
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        let mut z = vec![0.0; self.classes];
        self.logits(&self.standardize(row), &mut z);
        z.iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > z[best] { i } else { best })
    }

    pub fn accuracy(&self, xs: &[f64], ys: &[usize]) -> f64 {
        let hits = xs
            .chunks(self.dim)
            .zip(ys)
            .filter(|(row, &y)| self.predict(row) == y)
            .count();
        hits as f64 / ys.len() as f64
    }
}

/// Test accuracy (in percent) of predicting the fixed factor.
pub fn beta_vae_score<E: LatentEncoder + ?Sized>(
    encoder: &E,
    fds: &FactorDataset,
    cfg: &BetaVaeConfig,
    seed: u64,
) -> Result<f64> {
    cfg.validate()?;
    let factors: Vec<usize> = (0..4).filter(|&k| fds.cardinalities()[k] > 1).collect();
    if factors.len() < 4 {
        log::warn!("factors with a single value are excluded from the betaVAE score");
    }
    if factors.len() < 2 {
        return Err(Error::Data("betaVAE score needs two varying factors".into()));
    }
    let (codes, dim) = encoder.encode_all(fds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = cfg.batch_pair_size;
    let (train_x, train_y) =
        sample_points(&codes, dim, fds, &factors, cfg.n_train_points, pairs, &mut rng);
    let (test_x, test_y) =
        sample_points(&codes, dim, fds, &factors, cfg.n_test_points, pairs, &mut rng);
    let clf = LogisticRegression::fit(
        &train_x,
        &train_y,
        dim,
        factors.len(),
        cfg.regressor_steps,
        cfg.regressor_learning_rate,
    );
    Ok(100.0 * clf.accuracy(&test_x, &test_y))
}
