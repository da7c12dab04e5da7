use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{invalid, Result};

/// AdamW hyperparameters (decoupled weight decay).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamW {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return invalid(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return invalid("weight decay must be non-negative");
        }
        for b in [self.beta1, self.beta2] {
            if !(0.0..1.0).contains(&b) {
                return invalid(format!("moment decay must lie in [0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            return invalid("epsilon must be positive");
        }
        Ok(())
    }
}

/// First and second moment buffers, one per parameter tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// One AdamW update over parallel lists of parameters and gradients.
pub fn optimizer_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    state: &mut OptimState,
    cfg: &AdamW,
) -> Result<()> {
    if params.len() != grads.len() {
        return invalid("parameter and gradient lists differ in length");
    }
    for (p, g) in params.iter().zip(grads) {
        if !p.same_shape(g) {
            return invalid(format!("gradient shape {:?} != parameter shape {:?}", g.shape(), p.shape()));
        }
        if g.data().iter().any(|v| !v.is_finite()) {
            return invalid("non-finite gradient");
        }
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
        state.v = state.m.clone();
    } else if state.m.len() != params.len() || state.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
        return invalid("optimizer state does not match the parameter list");
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            *w -= cfg.lr * (mhat / (vhat.sqrt() + cfg.eps) + cfg.weight_decay * *w);
        }
    }
    Ok(())
}
