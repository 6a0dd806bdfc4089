//! Softmax, negative log-likelihood and the Jeffreys-regularized
//! cross-entropy
//!
//! ```text
//! L = -log p_k - alpha * sum_{i!=k} log p_i / (K-1)
//!              + beta  * sum_{i!=k} p_i log p_i / (1 - p_k)
//! ```
//!
//! Probabilities are floored at `epsilon` inside every logarithm and in the
//! `1 - p_k` denominator. Training goes through the `*_logits` functions,
//! which work in log-sum-exp form.

use serde::{Deserialize, Serialize};

use crate::data::PosteriorVector;
use crate::error::{Error, Result};
use crate::labels::NUM_CLASSES;

pub const DEFAULT_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JeffreysParams {
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
}

impl JeffreysParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        Self::with_epsilon(alpha, beta, DEFAULT_EPSILON)
    }

    pub fn with_epsilon(alpha: f64, beta: f64, epsilon: f64) -> Result<Self> {
        let p = JeffreysParams { alpha, beta, epsilon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha.is_finite()
            && self.alpha >= 0.0
            && self.beta.is_finite()
            && self.beta >= 0.0
            && self.epsilon > 0.0
            && self.epsilon <= 1e-6;
        if !ok {
            return Err(Error::InvalidConfig(format!(
                "jeffreys parameters alpha={} beta={} epsilon={}",
                self.alpha, self.beta, self.epsilon
            )));
        }
        Ok(())
    }
}

impl Default for JeffreysParams {
    fn default() -> Self {
        JeffreysParams {
            alpha: 0.1,
            beta: 0.05,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// Training objective applied to the classifier logits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossKind {
    Nll,
    Jeffreys(JeffreysParams),
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            LossKind::Nll => Ok(()),
            LossKind::Jeffreys(p) => p.validate(),
        }
    }

    /// Loss and its gradient with respect to `logits`.
    pub fn loss_and_grad(&self, logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
        let params = match self {
            LossKind::Nll => JeffreysParams {
                alpha: 0.0,
                beta: 0.0,
                epsilon: DEFAULT_EPSILON,
            },
            LossKind::Jeffreys(p) => *p,
        };
        jeffreys_loss_and_grad(logits, target, &params)
    }
}

fn check_logits(logits: &[f64]) -> Result<()> {
    if logits.is_empty() || logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(())
}

pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    check_logits(logits)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    Ok(logits.iter().map(|z| z - lse).collect())
}

/// Max-subtracted softmax over any number of classes.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    check_logits(logits)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    Ok(p)
}

pub fn posterior(logits: &[f64]) -> Result<PosteriorVector> {
    if logits.len() != NUM_CLASSES {
        return Err(Error::DimensionMismatch {
            expected: NUM_CLASSES,
            got: logits.len(),
        });
    }
    let p = softmax(logits)?;
    PosteriorVector::new(p.try_into().unwrap())
}

pub fn nll_loss(probs: &[f64], target: usize) -> f64 {
    -probs[target].max(DEFAULT_EPSILON).ln()
}

/// Jeffreys loss evaluated directly on a probability vector; `K` is
/// `probs.len()`.
pub fn jeffreys_loss(probs: &[f64], target: usize, params: &JeffreysParams) -> f64 {
    let k = probs.len();
    let eps = params.epsilon;
    let log = |p: f64| p.max(eps).ln();
    let mut sum_log = 0.0;
    let mut sum_plogp = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        if i != target {
            sum_log += log(p);
            sum_plogp += p * log(p);
        }
    }
    let denom = (1.0 - probs[target]).max(eps);
    let spread = if k > 1 { sum_log / (k - 1) as f64 } else { 0.0 };
    -log(probs[target]) - params.alpha * spread + params.beta * sum_plogp / denom
}

/// Jeffreys loss of `softmax(logits)` and its exact gradient with respect to
/// the logits. Active floors contribute no gradient.
pub fn jeffreys_loss_and_grad(logits: &[f64], target: usize, params: &JeffreysParams) -> Result<(f64, Vec<f64>)> {
    let lp = log_softmax(logits)?;
    let k = lp.len();
    if target >= k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: target + 1,
        });
    }
    let eps = params.epsilon;
    let log_eps = eps.ln();
    let p: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
    let live: Vec<bool> = lp.iter().map(|v| *v > log_eps).collect();
    let l: Vec<f64> = lp.iter().map(|v| v.max(log_eps)).collect();

    // 1 - p_k, summed from the other entries for accuracy near p_k = 1
    let rest: f64 = p.iter().enumerate().filter(|(i, _)| *i != target).map(|(_, v)| v).sum();
    let q_live = rest > eps;
    let q = rest.max(eps);
    let spread = if k > 1 { params.alpha / (k - 1) as f64 } else { 0.0 };

    let mut sum_log = 0.0;
    let mut s = 0.0;
    for i in (0..k).filter(|i| *i != target) {
        sum_log += l[i];
        s += p[i] * l[i];
    }
    let loss = -l[target] - spread * sum_log + params.beta * s / q;

    // h_i = p_i * dL/dp_i; dL/dz_j = h_j - p_j * sum_i h_i
    let mut h = vec![0.0; k];
    for i in 0..k {
        h[i] = if i == target {
            let ce = if live[i] { -1.0 } else { 0.0 };
            let denom = if q_live { params.beta * s * p[i] / (q * q) } else { 0.0 };
            ce + denom
        } else {
            let smooth = if live[i] { -spread } else { 0.0 };
            let entropy = params.beta * p[i] * (l[i] + if live[i] { 1.0 } else { 0.0 }) / q;
            smooth + entropy
        };
    }
    let total: f64 = h.iter().sum();
    let grad = h.iter().zip(&p).map(|(h, p)| h - p * total).collect();
    Ok((loss, grad))
}

pub fn jeffreys_grad_logits(logits: &[f64], target: usize, params: &JeffreysParams) -> Result<Vec<f64>> {
    Ok(jeffreys_loss_and_grad(logits, target, params)?.1)
}
