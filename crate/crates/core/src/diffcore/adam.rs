use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig<F> {
    pub learning_rate: F,
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
}

impl<F: Scalar> Default for AdamConfig<F> {
    fn default() -> Self {
        Self {
            learning_rate: F::of(1e-3),
            beta1: F::of(0.9),
            beta2: F::of(0.999),
            epsilon: F::of(1e-8),
        }
    }
}

/// Adam moment accumulators, one pair per parameter slot.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<F> {
    pub config: AdamConfig<F>,
    pub step: u64,
    first: Vec<Tensor<F>>,
    second: Vec<Tensor<F>>,
}

pub type Adam<F> = OptimizerState<F>;

impl<F: Scalar> OptimizerState<F> {
    pub fn new(params: &ModelParams<F>, config: AdamConfig<F>) -> Self {
        let zeros: Vec<_> = params.iter().map(|p| Tensor::zeros(p.tensor.shape())).collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams<F>, grads: &[Tensor<F>]) -> Result<()> {
        adam_update(params, grads, self)
    }
}

/// One bias-corrected Adam step applied in place.
pub fn adam_update<F: Scalar>(
    params: &mut ModelParams<F>,
    grads: &[Tensor<F>],
    state: &mut OptimizerState<F>,
) -> Result<()> {
    if grads.len() != params.len() || state.first.len() != params.len() {
        return Err(Error::config(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (slot, g) in grads.iter().enumerate() {
        let shape = params.entry(slot).tensor.shape();
        if g.shape() != shape || state.first[slot].shape() != shape {
            return Err(Error::config(format!(
                "adam: shape mismatch for {}: {:?} vs {:?}",
                params.entry(slot).name,
                shape,
                g.shape()
            )));
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = F::one() - c.beta1.powi(t);
    let bc2 = F::one() - c.beta2.powi(t);
    for (slot, g) in grads.iter().enumerate() {
        let m = state.first[slot].data_mut();
        let v = state.second[slot].data_mut();
        let p = params.tensor_mut(slot).data_mut();
        for i in 0..p.len() {
            let gi = g.data()[i];
            m[i] = c.beta1 * m[i] + (F::one() - c.beta1) * gi;
            v[i] = c.beta2 * v[i] + (F::one() - c.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
        }
    }
    if !params.is_finite() {
        return Err(Error::Numeric {
            node: 0,
            op: "adam_update",
            detail: "non-finite parameter after update".into(),
        });
    }
    Ok(())
}
