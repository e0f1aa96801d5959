use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Result, TrainError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter moment estimates and step counts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: Vec<u64>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: vec![0; params.len()],
        }
    }

    /// Number of updates applied to parameter `i`.
    pub fn steps(&self, i: usize) -> u64 {
        self.t[i]
    }
}

/// One bias-corrected Adam update of every parameter that requires gradients
/// and is flagged in `active`. All gradients are checked before anything is
/// written, so a non-finite gradient leaves parameters and state untouched.
/// Returns the number of parameters updated.
pub fn adam_step(params: &mut [Tensor], state: &mut AdamState, hyper: &AdamHyper, active: &[bool]) -> Result<usize> {
    if state.m.len() != params.len() || active.len() != params.len() {
        return Err(TrainError::Config(format!(
            "optimizer state for {} tensors, mask for {}, got {}",
            state.m.len(),
            active.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if let (true, Some(g)) = (active[i], p.grad()) {
            if g.len() != state.m[i].len() {
                return Err(TrainError::Config(format!("tensor {i} changed size")));
            }
            if let Some(j) = g.iter().position(|x| !x.is_finite()) {
                return Err(TrainError::NonFiniteGradient(format!("tensor {i} coordinate {j} = {}", g[j])));
            }
        }
    }
    let mut updated = 0;
    for (i, p) in params.iter_mut().enumerate() {
        if !active[i] {
            continue;
        }
        let (data, grad) = p.data_and_grad_mut();
        let Some(grad) = grad else { continue };
        state.t[i] += 1;
        let t = state.t[i] as f64;
        let c1 = 1.0 - libm::pow(hyper.beta1, t);
        let c2 = 1.0 - libm::pow(hyper.beta2, t);
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..data.len() {
            let g = grad[j];
            m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g;
            v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g * g;
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            data[j] -= hyper.lr * mhat / (libm::sqrt(vhat) + hyper.eps);
        }
        updated += 1;
    }
    Ok(updated)
}
