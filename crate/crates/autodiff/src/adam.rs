//! Adam with bias correction and an exponential learning-rate schedule.

use thiserror::Error;

use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdamError {
    #[error("gradient overflow in parameter `{0}`")]
    GradientOverflow(String),
    #[error("gradient for `{name}` has shape {got:?}, parameter has {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{params} parameters but {grads} gradients")]
    CountMismatch { params: usize, grads: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    /// Number of updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }
}

/// `lr0 * decay^(step / decay_steps)` with a continuous exponent.
pub fn exponential_decay(lr0: f64, decay: f64, decay_steps: u64, step: u64) -> f64 {
    lr0 * decay.powf(step as f64 / decay_steps as f64)
}

/// Applies one Adam update in place. Nothing is modified when any gradient
/// is non-finite or mis-shaped.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<(), AdamError> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(AdamError::CountMismatch {
            params: params.len(),
            grads: grads.len(),
        });
    }
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != params.tensor(i).shape() {
            return Err(AdamError::ShapeMismatch {
                name: params.name(i).to_string(),
                expected: params.tensor(i).shape().to_vec(),
                got: g.shape().to_vec(),
            });
        }
        if !g.all_finite() {
            return Err(AdamError::GradientOverflow(params.name(i).to_string()));
        }
    }

    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    for (i, g) in grads.iter().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = params.tensor_mut(i).data_mut();
        for j in 0..p.len() {
            let gj = g.data()[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
