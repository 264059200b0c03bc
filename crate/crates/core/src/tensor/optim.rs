use super::{Real, Tensor};
use crate::error::{Error, Result};

/// RMSprop without learning-rate decay and without classical momentum.
///
/// `acc ← rho·acc + (1−rho)·g²`, then `p ← p − lr·g / (√acc + eps)`.
#[derive(Clone, Debug)]
pub struct RmsPropState<T = f32> {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
    accumulators: Vec<Tensor<T>>,
}

impl<T: Real> RmsPropState<T> {
    pub const DEFAULT_RHO: f64 = 0.9;
    pub const DEFAULT_EPSILON: f64 = 1e-7;

    /// Zeroed accumulators mirroring `params`.
    pub fn new(params: &[Tensor<T>], learning_rate: f64) -> Self {
        RmsPropState {
            learning_rate,
            rho: Self::DEFAULT_RHO,
            epsilon: Self::DEFAULT_EPSILON,
            accumulators: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
        }
    }

    pub fn accumulators(&self) -> &[Tensor<T>] {
        &self.accumulators
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.accumulators.len() || grads.len() != params.len() {
            return Err(Error::dim(
                "rmsprop_step",
                format!(
                    "{} params, {} grads, {} accumulators",
                    params.len(),
                    grads.len(),
                    self.accumulators.len()
                ),
            ));
        }
        for (i, ((p, g), acc)) in params.iter().zip(grads).zip(&self.accumulators).enumerate() {
            if p.shape() != g.shape() || p.shape() != acc.shape() {
                return Err(Error::dim(
                    "rmsprop_step",
                    format!(
                        "parameter {i}: param {:?}, grad {:?}, accumulator {:?}",
                        p.shape(),
                        g.shape(),
                        acc.shape()
                    ),
                ));
            }
        }
        let rho = T::lit(self.rho);
        let one_minus_rho = T::lit(1.0 - self.rho);
        let lr = T::lit(self.learning_rate);
        let eps = T::lit(self.epsilon);
        for ((p, g), acc) in params.iter_mut().zip(grads).zip(&mut self.accumulators) {
            for ((pv, &gv), av) in p.data_mut().iter_mut().zip(g.data()).zip(acc.data_mut()) {
                *av = rho * *av + one_minus_rho * gv * gv;
                *pv = *pv - lr * gv / (av.sqrt() + eps);
            }
        }
        Ok(())
    }
}
