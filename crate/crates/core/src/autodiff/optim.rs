use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// Moment estimates for a fixed, ordered list of parameter arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamWConfig,
    pub step: u64,
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(config: AdamWConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            first: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            second: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }
}

/// One AdamW update. Weight decay is applied to the parameters directly,
/// separately from the adaptive gradient step.
pub fn adamw_step<T: Real>(
    params: &mut [&mut [T]],
    grads: &[Option<&[T]>],
    state: &mut OptimizerState<T>,
    lr: f64,
) -> Result<()> {
    if params.len() != state.first.len() || grads.len() != params.len() {
        return Err(Error::State(format!(
            "optimizer tracks {} arrays, got {} parameters and {} gradients",
            state.first.len(),
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        match g {
            None => return Err(Error::State(format!("missing gradient for parameter {i}"))),
            Some(g) if g.len() != p.len() || state.first[i].len() != p.len() => {
                return Err(Error::State(format!("size mismatch for parameter {i}")))
            }
            _ => {}
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = T::lit(1.0 - c.beta1.powi(t));
    let bc2 = T::lit(1.0 - c.beta2.powi(t));
    let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
    let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
    let lr_t = T::lit(lr);
    let keep = T::one() - T::lit(lr * c.weight_decay);
    let eps = T::lit(c.eps);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].expect("checked above");
        let (m, v) = (&mut state.first[i], &mut state.second[i]);
        for j in 0..p.len() {
            p[j] = p[j] * keep;
            m[j] = b1 * m[j] + one_b1 * g[j];
            v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            let update = lr_t * mhat / (vhat.sqrt() + eps);
            // a zero update must not flip the sign of a zero parameter
            if update != T::zero() {
                p[j] = p[j] - update;
            }
        }
    }
    Ok(())
}

/// Cosine annealing from `lr0` at epoch 0 to zero at `total_epochs`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr0: f64) -> f64 {
    if total_epochs == 0 {
        return 0.0;
    }
    let e = epoch.min(total_epochs) as f64;
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * e / total_epochs as f64).cos())
}
