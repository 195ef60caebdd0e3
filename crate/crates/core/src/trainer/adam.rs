//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Result};
use crate::model::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr > 0.0 && self.lr.is_finite()) || !unit(self.beta1) || !unit(self.beta2) || !(self.eps > 0.0) {
            return Err(contract_err!("invalid Adam settings {self:?}"));
        }
        Ok(())
    }
}

/// First and second moments aligned with a [`ParamStore`]'s order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar> {
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        Self::for_tensors(params.tensors())
    }

    pub fn for_tensors(params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape()).expect("valid shape")).collect();
        AdamState { t: 0, m: zeros(), v: zeros() }
    }
}

/// One update of every parameter. `grads[i]` must cover `params[i]`.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Option<&[T]>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    cfg.validate()?;
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(contract_err!("{} params, {} grads, {} moments", params.len(), grads.len(), state.m.len()));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let g = g.ok_or_else(|| contract_err!("parameter {i} has no gradient"))?;
        if g.len() != p.numel() || state.m[i].shape() != p.shape() || state.v[i].shape() != p.shape() {
            return Err(contract_err!("shape mismatch for parameter {i}"));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c = |v: f64| T::from_f64_lossy(v);
    let (b1, b2) = (c(cfg.beta1), c(cfg.beta2));
    let (bc1, bc2) = (c(1.0 - cfg.beta1.powi(t)), c(1.0 - cfg.beta2.powi(t)));
    let (lr, eps) = (c(cfg.lr), c(cfg.eps));
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].expect("checked above");
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (T::one() - b1) * gi;
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *x -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
