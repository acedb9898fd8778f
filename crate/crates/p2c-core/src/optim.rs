//! Adam with bias correction, specialized to the policy parameter set.

use serde::{Deserialize, Serialize};

use crate::models::PolicyParams;

#[derive(Debug, thiserror::Error)]
pub enum OptimError {
    #[error("gradient shape does not match optimizer state")]
    ShapeMismatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }
}

/// First/second moment accumulators shaped like theta, plus the step count.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    first_moment: PolicyParams,
    second_moment: PolicyParams,
    step: u64,
    pub config: AdamConfig,
}

impl OptimizerState {
    pub fn new(shape: &PolicyParams, config: AdamConfig) -> Self {
        OptimizerState {
            first_moment: shape.zeros_like(),
            second_moment: shape.zeros_like(),
            step: 0,
            config,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }
}

/// One Adam update: moments are advanced, bias-corrected, and the
/// parameters moved against the gradient. Deterministic.
pub fn adam_step(
    state: &mut OptimizerState,
    params: &mut PolicyParams,
    grad: &PolicyParams,
) -> Result<(), OptimError> {
    if params.param_count() != grad.param_count()
        || params.param_count() != state.first_moment.param_count()
        || params.b.len() != grad.b.len()
        || params.w_img[0].len() != grad.w_img[0].len()
        || params.w_tok[0].len() != grad.w_tok[0].len()
    {
        return Err(OptimError::ShapeMismatch);
    }
    state.step += 1;
    let t = state.step as i32;
    let cfg = state.config;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    for (((theta, m), v), g) in params
        .values_mut()
        .zip(state.first_moment.values_mut())
        .zip(state.second_moment.values_mut())
        .zip(grad.values())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *theta -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}
