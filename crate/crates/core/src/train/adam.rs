//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::TrainError;
use crate::nn::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>], config: AdamConfig) -> AdamState<T> {
        AdamState {
            config,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }
}

/// One Adam update. Gradients are checked before anything is modified, so
/// a non-finite gradient leaves parameters and state untouched.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    names: &[String],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainError::Config(format!(
            "adam: {} parameters, {} gradients, {} moment tensors",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(TrainError::Config(format!("adam: gradient shape {:?} for parameter {:?}", g.shape(), p.shape())));
        }
        if !g.all_finite() {
            return Err(TrainError::NonFiniteGradient(names.get(k).cloned().unwrap_or_else(|| format!("#{k}"))));
        }
    }
    state.t += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
    let (c1, c2) = (T::from_f64(1.0 - beta1), T::from_f64(1.0 - beta2));
    let step = T::from_f64(lr / bc1);
    let inv_bc2 = T::from_f64(1.0 / bc2);
    let eps = T::from_f64(eps);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *mi = b1 * *mi + c1 * gi;
            *vi = b2 * *vi + c2 * gi * gi;
            *pi = *pi - step * *mi / ((*vi * inv_bc2).sqrt() + eps);
        }
    }
    Ok(())
}
