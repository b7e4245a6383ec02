//! Adam with bias correction over the flat parameter buffer.

use super::{DenoiserParams, GradientSet, NetError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First/second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &DenoiserParams) -> Self {
        Self { m: vec![0.0; params.param_count()], v: vec![0.0; params.param_count()], step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One update in place. Moments decay even where the gradient is zero.
pub fn adam_step(
    params: &mut DenoiserParams,
    grads: &GradientSet,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), NetError> {
    if grads.data().len() != params.param_count() || state.m.len() != params.param_count() {
        return Err(NetError::ShapeMismatch {
            context: format!(
                "adam: {} params, {} grads, {} moments",
                params.param_count(),
                grads.data().len(),
                state.m.len()
            ),
        });
    }
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    let data = params.data_mut();
    for i in 0..data.len() {
        let g = grads.data()[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}
