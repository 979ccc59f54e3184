use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::nn::ModelParams;

/// AdamW hyperparameters other than the learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments, mirroring the parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

impl OptState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One AdamW update with decoupled weight decay. Returns `false` (and leaves
/// everything untouched) when the gradients are not finite.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptState,
    lr: f64,
    hp: &AdamW,
) -> Result<bool> {
    ensure!(
        params.arch() == grads.arch() && params.arch() == state.m.arch(),
        ShapeMismatch,
        "parameters, gradients and optimizer state disagree on the architecture"
    );
    if !grads.is_finite() {
        return Ok(false);
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    let shrink = 1.0 - lr * hp.weight_decay;
    let tensors = params
        .tensors_mut()
        .iter_mut()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut().iter_mut().zip(state.v.tensors_mut()));
    for ((p, g), (m, v)) in tensors {
        for (((p, g), m), v) in p.data.iter_mut().zip(&g.data).zip(m.data.iter_mut()).zip(v.data.iter_mut()) {
            *p *= shrink;
            *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
            *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + hp.eps);
        }
    }
    Ok(true)
}

/// `base * (1 + cos(pi * step / total)) / 2`, clamped at `total`.
pub fn cosine_lr(step: usize, total: usize, base: f64) -> f64 {
    if total == 0 {
        return base;
    }
    let x = step.min(total) as f64 / total as f64;
    base * 0.5 * (1.0 + (PI * x).cos())
}
