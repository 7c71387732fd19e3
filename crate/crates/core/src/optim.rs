//! AdaGrad and global-norm gradient clipping.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;

pub const ADAGRAD_EPSILON: f64 = 1e-8;

/// Per-parameter sums of squared gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaGradState<F> {
    pub learning_rate: F,
    pub accumulators: Vec<Vec<F>>,
}

impl<F: Scalar> AdaGradState<F> {
    pub fn new(params: &ParamSet<F>, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        Ok(AdaGradState {
            learning_rate: F::of(learning_rate),
            accumulators: params
                .tensors()
                .iter()
                .map(|t| vec![F::zero(); t.len()])
                .collect(),
        })
    }

    /// `acc += g²; p -= lr · g / (sqrt(acc) + δ)`.
    pub fn step(&mut self, params: &mut ParamSet<F>, grads: &[Vec<F>]) -> Result<()> {
        if grads.len() != params.len() || self.accumulators.len() != params.len() {
            return Err(Error::Shape(format!(
                "{} gradients / {} accumulators for {} parameters",
                grads.len(),
                self.accumulators.len(),
                params.len()
            )));
        }
        let delta = F::of(ADAGRAD_EPSILON);
        for ((p, g), acc) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.accumulators)
        {
            if g.len() != p.len() || acc.len() != p.len() {
                return Err(Error::Shape(format!(
                    "gradient of length {} for parameter {:?}",
                    g.len(),
                    p.shape
                )));
            }
            for ((w, &gi), a) in p.data.iter_mut().zip(g).zip(acc.iter_mut()) {
                *a = *a + gi * gi;
                *w = *w - self.learning_rate * gi / (a.sqrt() + delta);
            }
        }
        Ok(())
    }
}

pub fn global_norm<F: Scalar>(grads: &[Vec<F>]) -> F {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .fold(F::zero(), |s, &v| s + v * v)
        .sqrt()
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<F: Scalar>(grads: &mut [Vec<F>], max_norm: f64) -> F {
    let norm = global_norm(grads);
    let max = F::of(max_norm);
    if norm > max {
        let s = max / norm;
        for v in grads.iter_mut().flat_map(|g| g.iter_mut()) {
            *v = *v * s;
        }
    }
    norm
}
