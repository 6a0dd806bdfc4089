//! Adam and the NewBob validation-driven learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Moment accumulators for one flat parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::ShapeMismatch {
            params: n,
            grads: grads.len(),
            state: state.m.len().min(state.v.len()),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..n {
        let g = grads[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewBobConfig {
    /// Minimum relative improvement of the validation metric.
    pub improvement_threshold: f64,
    pub anneal_factor: f64,
    /// Consecutive anneals tolerated before early stopping.
    pub patience: u32,
}

impl NewBobConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.anneal_factor > 0.0 && self.anneal_factor < 1.0) || !self.improvement_threshold.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "newbob threshold {} factor {}",
                self.improvement_threshold, self.anneal_factor
            )));
        }
        Ok(())
    }
}

impl Default for NewBobConfig {
    fn default() -> Self {
        NewBobConfig {
            improvement_threshold: 0.0025,
            anneal_factor: 0.5,
            patience: 2,
        }
    }
}

/// Scheduler state for one learning rate. Higher metric values are better.
#[derive(Debug, Clone, PartialEq)]
pub struct NewBobState {
    pub config: NewBobConfig,
    pub lr: f64,
    pub previous: Option<f64>,
    pub consecutive_anneals: u32,
    pub stop: bool,
}

impl NewBobState {
    pub fn new(config: NewBobConfig, lr: f64) -> Self {
        NewBobState {
            config,
            lr,
            previous: None,
            consecutive_anneals: 0,
            stop: false,
        }
    }
}

/// Feeds one validation measurement; returns the learning rate to use next.
/// The first measurement only establishes the baseline.
pub fn newbob_update(state: &mut NewBobState, metric: f64) -> f64 {
    if let Some(prev) = state.previous {
        let improvement = (metric - prev) / prev.max(1e-9);
        if improvement < state.config.improvement_threshold {
            state.lr *= state.config.anneal_factor;
            state.consecutive_anneals += 1;
            if state.consecutive_anneals > state.config.patience {
                state.stop = true;
            }
        } else {
            state.consecutive_anneals = 0;
        }
    }
    state.previous = Some(metric);
    state.lr
}
