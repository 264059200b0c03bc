//! The dense semi-supervised VAE and its two ablations.
//!
//! A single encoder trunk feeds three heads: latent mean, latent
//! log-variance, and the softmax class head π. The decoder reconstructs the
//! input from `π ⊕ z` (π first). The supervised ablation keeps only trunk
//! and π head; the unsupervised ablation drops π and is a plain VAE.

pub mod checkpoint;
pub mod loss;
mod spec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

pub use spec::{ModelSpec, Variant};

/// Bounds applied to the log-variance head before exponentiation.
pub const LOG_VAR_BOUNDS: (f64, f64) = (-10.0, 10.0);

/// Rows per forward pass in the batched inference helpers.
const INFERENCE_CHUNK: usize = 1000;

#[derive(Clone, Copy, Debug)]
struct Dense {
    weight: usize,
    bias: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    encoder: Vec<Dense>,
    mu: Option<Dense>,
    log_var: Option<Dense>,
    pi: Option<Dense>,
    decoder: Vec<Dense>,
    output: Option<Dense>,
}

impl Layout {
    fn of(spec: &ModelSpec) -> Layout {
        let mut next = 0;
        let mut dense = || {
            let d = Dense {
                weight: next,
                bias: next + 1,
            };
            next += 2;
            d
        };
        let encoder = spec.encoder_widths.iter().map(|_| dense()).collect();
        let (mu, log_var) = if spec.variant.has_latent() {
            (Some(dense()), Some(dense()))
        } else {
            (None, None)
        };
        let pi = spec.variant.has_class_head().then(&mut dense);
        let (decoder, output) = if spec.variant.has_decoder() {
            let decoder = spec.decoder_widths.iter().map(|_| dense()).collect();
            (decoder, Some(dense()))
        } else {
            (Vec::new(), None)
        };
        Layout {
            encoder,
            mu,
            log_var,
            pi,
            decoder,
            output,
        }
    }
}

/// Parameters recorded on a tape for one forward pass.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Encoder head outputs. Heads absent from the variant are `None`.
#[derive(Clone, Copy, Debug)]
pub struct EncoderHeads {
    variant: Variant,
    pub mu: Option<Var>,
    pub log_var: Option<Var>,
    pub log_pi: Option<Var>,
    pub pi: Option<Var>,
}

impl EncoderHeads {
    fn require(&self, head: Option<Var>, what: &'static str) -> Result<Var> {
        head.ok_or(Error::Variant {
            variant: self.variant.code(),
            what,
        })
    }

    pub fn mu(&self) -> Result<Var> {
        self.require(self.mu, "latent mean head")
    }

    pub fn log_var(&self) -> Result<Var> {
        self.require(self.log_var, "latent log-variance head")
    }

    pub fn pi(&self) -> Result<Var> {
        self.require(self.pi, "class head")
    }

    pub fn log_pi(&self) -> Result<Var> {
        self.require(self.log_pi, "class head")
    }
}

/// Everything one forward pass produces.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutputs {
    pub pi: Option<Var>,
    pub log_pi: Option<Var>,
    pub mu: Option<Var>,
    pub log_var: Option<Var>,
    pub z: Option<Var>,
    pub x_recon: Option<Var>,
}

/// How the latent code is obtained from the Gaussian heads.
pub enum LatentSampling<'a> {
    /// `z = μ`.
    Mean,
    /// `z = μ + exp(½·log σ²) ⊙ ε` with `ε ~ N(0, I)` from this generator.
    Noise(&'a mut dyn rand::RngCore),
}

/// What the decoder receives in the class slot.
#[derive(Clone, Copy, Debug)]
pub enum ClassConditioning<'a> {
    /// The predicted π for every row.
    Predicted,
    /// The true one-hot label for labeled rows, predicted π elsewhere.
    TeacherForced(&'a [Option<usize>]),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SsVaeModel<T = f32> {
    spec: ModelSpec,
    params: Vec<Tensor<T>>,
}

impl<T: Real> SsVaeModel<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let params = spec
            .parameter_layout()
            .into_iter()
            .map(|(_, shape)| init_parameter(&shape, rng))
            .collect();
        Ok(SsVaeModel { spec, params })
    }

    /// Every parameter zero.
    pub fn zeroed(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let params = spec
            .parameter_layout()
            .into_iter()
            .map(|(_, shape)| Tensor::zeros(shape))
            .collect();
        Ok(SsVaeModel { spec, params })
    }

    pub fn from_parameters(spec: ModelSpec, params: Vec<Tensor<T>>) -> Result<Self> {
        spec.validate()?;
        let layout = spec.parameter_layout();
        if layout.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter arrays, found {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in layout.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "{name}: expected shape {shape:?}, found {:?}",
                    p.shape()
                )));
            }
        }
        Ok(SsVaeModel { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn variant(&self) -> Variant {
        self.spec.variant
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.spec
            .parameter_layout()
            .into_iter()
            .map(|(n, _)| n)
            .collect()
    }

    pub fn parameter(&self, name: &str) -> Option<&Tensor<T>> {
        let idx = self.parameter_names().iter().position(|n| n == name)?;
        Some(&self.params[idx])
    }

    pub fn cast<U: Real>(&self) -> SsVaeModel<U> {
        SsVaeModel {
            spec: self.spec.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    /// Records the parameters as trainable leaves.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundParams {
        BoundParams {
            vars: self.params.iter().map(|p| tape.param(p.clone())).collect(),
        }
    }

    /// Records the parameters as constants, for inference.
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> BoundParams {
        BoundParams {
            vars: self.params.iter().map(|p| tape.constant(p.clone())).collect(),
        }
    }

    fn dense(&self, tape: &mut Tape<T>, bound: &BoundParams, layer: Dense, x: Var) -> Result<Var> {
        let h = tape.matmul(x, bound.vars[layer.weight])?;
        tape.add_row(h, bound.vars[layer.bias])
    }

    pub fn encode(&self, tape: &mut Tape<T>, bound: &BoundParams, x: Var) -> Result<EncoderHeads> {
        let layout = Layout::of(&self.spec);
        let mut h = x;
        for &layer in &layout.encoder {
            let pre = self.dense(tape, bound, layer, h)?;
            h = tape.relu(pre);
        }
        let mu = layout
            .mu
            .map(|layer| self.dense(tape, bound, layer, h))
            .transpose()?;
        let log_var = layout
            .log_var
            .map(|layer| -> Result<Var> {
                let raw = self.dense(tape, bound, layer, h)?;
                Ok(tape.clamp(raw, LOG_VAR_BOUNDS.0, LOG_VAR_BOUNDS.1))
            })
            .transpose()?;
        let (log_pi, pi) = match layout.pi {
            Some(layer) => {
                let logits = self.dense(tape, bound, layer, h)?;
                let log_pi = tape.log_softmax(logits);
                (Some(log_pi), Some(tape.exp(log_pi)))
            }
            None => (None, None),
        };
        Ok(EncoderHeads {
            variant: self.spec.variant,
            mu,
            log_var,
            log_pi,
            pi,
        })
    }

    /// `z = μ + exp(½·log σ²) ⊙ ε`; gradients reach `mu` and `log_var`, not `ε`.
    pub fn reparameterize<R: Rng + ?Sized>(
        tape: &mut Tape<T>,
        mu: Var,
        log_var: Var,
        rng: &mut R,
    ) -> Result<Var> {
        let shape = tape.shape(mu).to_vec();
        if shape != tape.shape(log_var) {
            return Err(Error::dim(
                "reparameterize",
                format!("mu {:?} vs log_var {:?}", shape, tape.shape(log_var)),
            ));
        }
        let numel = shape.iter().product();
        let noise: Vec<T> = (0..numel)
            .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let eps = tape.constant(Tensor::new(shape, noise)?);
        let half = tape.scale(log_var, 0.5);
        let sigma = tape.exp(half);
        let spread = tape.mul(sigma, eps)?;
        tape.add(mu, spread)
    }

    /// Decodes `π ⊕ z` (or `z` alone when the decoder takes no class input).
    pub fn decode(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams,
        pi: Option<Var>,
        z: Var,
    ) -> Result<Var> {
        let layout = Layout::of(&self.spec);
        let output = layout.output.ok_or(Error::Variant {
            variant: self.spec.variant.code(),
            what: "decoder",
        })?;
        let mut h = if self.spec.decoder_takes_pi() {
            let pi = pi.ok_or_else(|| {
                Error::Contract("this decoder needs class probabilities alongside z".into())
            })?;
            tape.concat_cols(pi, z)?
        } else {
            z
        };
        for &layer in &layout.decoder {
            let pre = self.dense(tape, bound, layer, h)?;
            h = tape.relu(pre);
        }
        let logits = self.dense(tape, bound, output, h)?;
        Ok(tape.sigmoid(logits))
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams,
        x: Var,
        sampling: LatentSampling<'_>,
        conditioning: ClassConditioning<'_>,
    ) -> Result<ForwardOutputs> {
        let heads = self.encode(tape, bound, x)?;
        let mut out = ForwardOutputs {
            pi: heads.pi,
            log_pi: heads.log_pi,
            mu: heads.mu,
            log_var: heads.log_var,
            z: None,
            x_recon: None,
        };
        if !self.spec.variant.has_decoder() {
            return Ok(out);
        }
        let (mu, log_var) = (heads.mu()?, heads.log_var()?);
        let z = match sampling {
            LatentSampling::Mean => mu,
            LatentSampling::Noise(rng) => Self::reparameterize(tape, mu, log_var, rng)?,
        };
        let class_input = match (heads.pi, conditioning) {
            (Some(pi), ClassConditioning::TeacherForced(labels)) if self.spec.decoder_takes_pi() => {
                Some(self.teacher_force(tape, pi, labels)?)
            }
            (pi, _) => pi,
        };
        out.z = Some(z);
        out.x_recon = Some(self.decode(tape, bound, class_input, z)?);
        Ok(out)
    }

    fn teacher_force(&self, tape: &mut Tape<T>, pi: Var, labels: &[Option<usize>]) -> Result<Var> {
        let (rows, classes) = tape.value(pi).dims2()?;
        if labels.len() != rows {
            return Err(Error::dim(
                "teacher_force",
                format!("{} labels for {rows} rows", labels.len()),
            ));
        }
        let mut keep = vec![T::one(); rows * classes];
        let mut onehot = vec![T::zero(); rows * classes];
        for (i, label) in labels.iter().enumerate() {
            if let Some(y) = *label {
                if y >= classes {
                    return Err(Error::Data(format!("label {y} >= {classes} classes")));
                }
                keep[i * classes..(i + 1) * classes].fill(T::zero());
                onehot[i * classes + y] = T::one();
            }
        }
        let keep = tape.constant(Tensor::new([rows, classes], keep)?);
        let onehot = tape.constant(Tensor::new([rows, classes], onehot)?);
        let kept = tape.mul(pi, keep)?;
        tape.add(kept, onehot)
    }

    fn check_rows(&self, x: &[T]) -> Result<usize> {
        let d = self.spec.input_dim;
        if x.is_empty() || !x.len().is_multiple_of(d) {
            return Err(Error::dim(
                "model input",
                format!("{} values is not a whole number of {d}-wide rows", x.len()),
            ));
        }
        Ok(x.len() / d)
    }

    /// Runs `f` over row chunks of `x` on throwaway tapes and concatenates results.
    fn infer_chunks(
        &self,
        x: &[T],
        mut f: impl FnMut(&mut Tape<T>, &BoundParams, Var) -> Result<Var>,
    ) -> Result<Vec<T>> {
        let d = self.spec.input_dim;
        self.check_rows(x)?;
        let mut out = Vec::new();
        for chunk in x.chunks(INFERENCE_CHUNK * d) {
            let mut tape = Tape::new();
            let bound = self.bind_frozen(&mut tape);
            let xv = tape.constant(Tensor::new([chunk.len() / d, d], chunk.to_vec())?);
            let y = f(&mut tape, &bound, xv)?;
            out.extend_from_slice(tape.value(y).data());
        }
        Ok(out)
    }

    /// Class probabilities, `n×num_classes` row-major.
    pub fn predict_proba(&self, x: &[T]) -> Result<Vec<T>> {
        self.infer_chunks(x, |tape, bound, xv| self.encode(tape, bound, xv)?.pi())
    }

    /// Latent means, `n×latent_dim` row-major.
    pub fn latent_mean(&self, x: &[T]) -> Result<Vec<T>> {
        self.infer_chunks(x, |tape, bound, xv| self.encode(tape, bound, xv)?.mu())
    }

    /// Deterministic reconstruction using `z = μ` and the predicted π.
    pub fn reconstruct(&self, x: &[T]) -> Result<Vec<T>> {
        self.infer_chunks(x, |tape, bound, xv| {
            let out = self.forward(
                tape,
                bound,
                xv,
                LatentSampling::Mean,
                ClassConditioning::Predicted,
            )?;
            out.x_recon.ok_or(Error::Variant {
                variant: self.spec.variant.code(),
                what: "decoder",
            })
        })
    }

    /// Decodes given class vectors (`n×num_classes`, ignored when the
    /// decoder takes no class input) and latent codes (`n×latent_dim`).
    pub fn generate(&self, class_vectors: &[T], z: &[T]) -> Result<Vec<T>> {
        let latent = self.spec.latent_dim;
        if z.is_empty() || !z.len().is_multiple_of(latent) {
            return Err(Error::dim("generate", "latent codes are not whole rows"));
        }
        let n = z.len() / latent;
        let mut tape = Tape::new();
        let bound = self.bind_frozen(&mut tape);
        let zv = tape.constant(Tensor::new([n, latent], z.to_vec())?);
        let pi = if self.spec.decoder_takes_pi() {
            let c = self.spec.num_classes;
            Some(tape.constant(Tensor::new([n, c], class_vectors.to_vec())?))
        } else {
            None
        };
        let x = self.decode(&mut tape, &bound, pi, zv)?;
        Ok(tape.value(x).data().to_vec())
    }

    /// The plain VAE obtained by deleting the class head (and its decoder inputs).
    pub fn without_class_head(&self) -> Result<Self> {
        if self.spec.variant != Variant::SemiSupervised {
            return Err(Error::Argument(format!(
                "class-head ablation needs an SS model, got {}",
                self.spec.variant
            )));
        }
        let target = ModelSpec {
            variant: Variant::Unsupervised,
            ..self.spec.clone()
        };
        let classes = self.spec.num_classes;
        let drop_pi_rows = self.spec.decoder_takes_pi();
        let params = self.project(&target, |name, p| {
            if name == "decoder.0.weight" && drop_pi_rows {
                let cols = p.shape()[1];
                let rows = p.shape()[0] - classes;
                Tensor::new([rows, cols], p.data()[classes * cols..].to_vec())
            } else {
                Ok(p.clone())
            }
        })?;
        SsVaeModel::from_parameters(target, params)
    }

    /// The classifier obtained by deleting sampling step and decoder.
    pub fn without_decoder(&self) -> Result<Self> {
        if self.spec.variant != Variant::SemiSupervised {
            return Err(Error::Argument(format!(
                "decoder ablation needs an SS model, got {}",
                self.spec.variant
            )));
        }
        let target = ModelSpec {
            variant: Variant::Supervised,
            ..self.spec.clone()
        };
        let params = self.project(&target, |_, p| Ok(p.clone()))?;
        SsVaeModel::from_parameters(target, params)
    }

    /// Parameters of `target`, each produced from the same-named parameter here.
    fn project(
        &self,
        target: &ModelSpec,
        f: impl Fn(&str, &Tensor<T>) -> Result<Tensor<T>>,
    ) -> Result<Vec<Tensor<T>>> {
        let names = self.parameter_names();
        target
            .parameter_layout()
            .into_iter()
            .map(|(name, _)| {
                let idx = names
                    .iter()
                    .position(|n| *n == name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
                f(&name, &self.params[idx])
            })
            .collect()
    }

    /// Builds an SS model from a trained EU model: shared layers are copied,
    /// the class head is freshly initialized and the decoder's class inputs
    /// start at zero, so initial reconstructions match the EU model.
    pub fn transfer_from_unsupervised<R: Rng + ?Sized>(
        source: &SsVaeModel<T>,
        target: ModelSpec,
        rng: &mut R,
    ) -> Result<Self> {
        target.validate()?;
        let expected_source = ModelSpec {
            variant: Variant::Unsupervised,
            ..target.clone()
        };
        if source.variant() != Variant::Unsupervised
            || target.variant != Variant::SemiSupervised
            || source.spec != expected_source
        {
            return Err(Error::Checkpoint(format!(
                "cannot transfer {:?} into {:?}",
                source.spec, target
            )));
        }
        let classes = target.num_classes;
        let source_names = source.parameter_names();
        let params = target
            .parameter_layout()
            .into_iter()
            .map(|(name, shape)| {
                if name.starts_with("pi.") {
                    return Ok(init_parameter(&shape, rng));
                }
                let idx = source_names
                    .iter()
                    .position(|n| *n == name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
                let p = &source.params[idx];
                if name == "decoder.0.weight" && target.decoder_takes_pi() {
                    let mut data = vec![T::zero(); classes * shape[1]];
                    data.extend_from_slice(p.data());
                    Tensor::new(shape, data)
                } else {
                    Ok(p.clone())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        SsVaeModel::from_parameters(target, params)
    }
}

fn init_parameter<T: Real, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    match *shape {
        [fan_in, fan_out] => {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| T::lit(rng.gen_range(-limit..limit)))
                .collect();
            Tensor::new(shape.to_vec(), data).expect("shape from layout")
        }
        _ => Tensor::zeros(shape.to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn small_spec(variant: Variant) -> ModelSpec {
        ModelSpec {
            variant,
            input_dim: 6,
            encoder_widths: vec![5, 4],
            latent_dim: 2,
            num_classes: 3,
            decoder_widths: vec![4, 5],
            pi_to_decoder: true,
        }
    }

    fn batch(rows: usize, d: usize) -> Tensor<f64> {
        let data = (0..rows * d).map(|i| ((i * 37 % 11) as f64) / 10.0).collect();
        Tensor::new([rows, d], data).unwrap()
    }

    #[test]
    fn zero_model_outputs() {
        let model = SsVaeModel::<f64>::zeroed(small_spec(Variant::SemiSupervised)).unwrap();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let x = tape.constant(batch(2, 6));
        let out = model
            .forward(&mut tape, &bound, x, LatentSampling::Mean, ClassConditioning::Predicted)
            .unwrap();
        assert_eq!(tape.shape(out.mu.unwrap()), &[2, 2]);
        assert!(tape.value(out.mu.unwrap()).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(out.log_var.unwrap()).data().iter().all(|&v| v == 0.0));
        for &p in tape.value(out.pi.unwrap()).data() {
            assert_relative_eq!(p, 1.0 / 3.0, epsilon = 1e-12);
        }
        let recon = tape.value(out.x_recon.unwrap());
        assert_eq!(recon.shape(), &[2, 6]);
        assert!(recon.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn missing_heads_are_variant_errors() {
        let es = SsVaeModel::<f64>::zeroed(small_spec(Variant::Supervised)).unwrap();
        let mut tape = Tape::new();
        let bound = es.bind(&mut tape);
        let x = tape.constant(batch(1, 6));
        let heads = es.encode(&mut tape, &bound, x).unwrap();
        assert!(matches!(heads.mu(), Err(Error::Variant { variant: "ES", .. })));
        assert!(heads.pi().is_ok());
        let z = tape.constant(Tensor::zeros([1, 2]));
        assert!(matches!(
            es.decode(&mut tape, &bound, None, z),
            Err(Error::Variant { .. })
        ));

        let eu = SsVaeModel::<f64>::zeroed(small_spec(Variant::Unsupervised)).unwrap();
        let mut tape = Tape::new();
        let bound = eu.bind(&mut tape);
        let x = tape.constant(batch(1, 6));
        let heads = eu.encode(&mut tape, &bound, x).unwrap();
        assert!(matches!(heads.pi(), Err(Error::Variant { variant: "EU", .. })));
    }

    #[test]
    fn reparameterize_is_seeded_and_collapses_without_variance() {
        let mut tape = Tape::<f64>::new();
        let mu = tape.constant(Tensor::from_f64([1, 3], &[0.5, -1.0, 2.0]).unwrap());
        let lv = tape.constant(Tensor::from_f64([1, 3], &[0.3, 0.0, -0.7]).unwrap());
        let z1 = SsVaeModel::reparameterize(&mut tape, mu, lv, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let z2 = SsVaeModel::reparameterize(&mut tape, mu, lv, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(tape.value(z1), tape.value(z2));

        // lower clamp bound stands in for log σ² → −∞
        let tiny = tape.constant(Tensor::filled([1, 3], LOG_VAR_BOUNDS.0 * 4.0));
        let z = SsVaeModel::reparameterize(&mut tape, mu, tiny, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        for (a, b) in tape.value(z).data().iter().zip(tape.value(mu).data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn reparameterize_gradient_skips_noise() {
        let mut tape = Tape::<f64>::new();
        let mu = tape.param(Tensor::from_f64([1, 2], &[0.0, 0.0]).unwrap());
        let lv = tape.param(Tensor::from_f64([1, 2], &[0.0, 0.0]).unwrap());
        let z = SsVaeModel::reparameterize(&mut tape, mu, lv, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let l = tape.sum(z);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(mu).unwrap().data(), &[1.0, 1.0]);
        // d z / d lv = ½·ε·exp(½ lv); ε recoverable from z since mu = 0, σ = 1.
        let zs = tape.value(z).data().to_vec();
        for (g, e) in tape.grad(lv).unwrap().data().iter().zip(zs) {
            assert_relative_eq!(*g, 0.5 * e, epsilon = 1e-12);
        }
    }

    #[test]
    fn reparameterize_monte_carlo_mean() {
        let n = 100_000;
        let mut tape = Tape::<f64>::new();
        let mu = tape.constant(Tensor::filled([n, 1], 1.0));
        let lv = tape.constant(Tensor::zeros([n, 1]));
        let z = SsVaeModel::reparameterize(&mut tape, mu, lv, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let mean = tape.value(z).data().iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "sample mean {mean}");
    }

    #[test]
    fn class_head_ablation_matches_unsupervised_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ss = SsVaeModel::<f64>::new(small_spec(Variant::SemiSupervised), &mut rng).unwrap();
        let eu = ss.without_class_head().unwrap();
        assert_eq!(eu.variant(), Variant::Unsupervised);
        // Silencing the π inputs of the decoder makes SS compute exactly what EU does.
        let idx = ss.parameter_names().iter().position(|n| n == "decoder.0.weight").unwrap();
        let cols = ss.params()[idx].shape()[1];
        ss.params_mut()[idx].data_mut()[..3 * cols].fill(0.0);
        let x: Vec<f64> = batch(4, 6).into_data();
        assert_eq!(ss.reconstruct(&x).unwrap(), eu.reconstruct(&x).unwrap());
        assert_eq!(ss.latent_mean(&x).unwrap(), eu.latent_mean(&x).unwrap());
    }

    #[test]
    fn decoder_ablation_matches_classifier_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ss = SsVaeModel::<f64>::new(small_spec(Variant::SemiSupervised), &mut rng).unwrap();
        let es = ss.without_decoder().unwrap();
        let x: Vec<f64> = batch(4, 6).into_data();
        assert_eq!(ss.predict_proba(&x).unwrap(), es.predict_proba(&x).unwrap());
    }

    #[test]
    fn transfer_keeps_shared_layers_and_reconstructions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let eu = SsVaeModel::<f64>::new(small_spec(Variant::Unsupervised), &mut rng).unwrap();
        let ss = SsVaeModel::transfer_from_unsupervised(
            &eu,
            small_spec(Variant::SemiSupervised),
            &mut rng,
        )
        .unwrap();
        for name in eu.parameter_names() {
            if name == "decoder.0.weight" {
                continue;
            }
            assert_eq!(eu.parameter(&name), ss.parameter(&name), "{name}");
        }
        let dec = ss.parameter("decoder.0.weight").unwrap();
        let eu_dec = eu.parameter("decoder.0.weight").unwrap();
        assert_eq!(&dec.data()[3 * 4..], eu_dec.data());
        let x: Vec<f64> = batch(3, 6).into_data();
        assert_eq!(ss.reconstruct(&x).unwrap(), eu.reconstruct(&x).unwrap());
    }

    #[test]
    fn teacher_forcing_replaces_labeled_rows() {
        let model = SsVaeModel::<f64>::new(
            small_spec(Variant::SemiSupervised),
            &mut ChaCha8Rng::seed_from_u64(8),
        )
        .unwrap();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let x = tape.constant(batch(2, 6));
        let heads = model.encode(&mut tape, &bound, x).unwrap();
        let pi = heads.pi().unwrap();
        let forced = model.teacher_force(&mut tape, pi, &[Some(2), None]).unwrap();
        let v = tape.value(forced).data().to_vec();
        assert_eq!(&v[..3], &[0.0, 0.0, 1.0]);
        assert_eq!(&v[3..], tape.value(pi).row(1));
    }
}
