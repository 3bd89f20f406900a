//! Reference training objectives over supplied log-probabilities.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Length-normalized.
    #[default]
    Mean,
    Sum,
}

/// Negative log-likelihood of a continuation from its per-token
/// log-probabilities.
pub fn sft_nll(logprobs: &[f64], agg: Aggregation) -> Result<f64> {
    if logprobs.is_empty() {
        return Err(Error::invalid("sequence must contain at least one token"));
    }
    if let Some(bad) = logprobs.iter().find(|v| !v.is_finite() || **v > 0.0) {
        return Err(Error::invalid(format!("log-probabilities must be finite and ≤ 0, got {bad}")));
    }
    let total: f64 = logprobs.iter().map(|v| -v).sum();
    Ok(match agg {
        Aggregation::Mean => total / logprobs.len() as f64,
        Aggregation::Sum => total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreferenceScores {
    pub logp_w_policy: f64,
    pub logp_l_policy: f64,
    pub logp_w_ref: f64,
    pub logp_l_ref: f64,
    pub beta: f64,
}

impl PreferenceScores {
    pub fn margin(&self) -> f64 {
        (self.logp_w_policy - self.logp_w_ref) - (self.logp_l_policy - self.logp_l_ref)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Preference loss `-ln σ(β · margin)`.
pub fn dpo_loss(s: &PreferenceScores) -> Result<f64> {
    let fields = [s.logp_w_policy, s.logp_l_policy, s.logp_w_ref, s.logp_l_ref, s.beta];
    if !fields.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("preference scores".into()));
    }
    if s.beta < 0.0 {
        return Err(Error::invalid(format!("beta must be nonnegative, got {}", s.beta)));
    }
    Ok(softplus(-s.beta * s.margin()))
}
