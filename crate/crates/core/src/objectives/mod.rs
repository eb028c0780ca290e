//! Training objectives with analytic parameter gradients.
//!
//! Every loss is assembled from per-logit gradients (loss residuals) pulled
//! back through the policy with one vector-Jacobian product per sequence.

mod preference;
mod sft;

pub use preference::{
    cw_dpo_loss, dpo_loss, focal_dpo_loss, preference_batch_loss, preference_loss, LossBreakdown,
    LossResidualDecomposition, PairOutput, PreferenceBatchOutput, PreferenceObjective,
};
pub use sft::{
    label_smoothing_sft_loss, negative_nll, sft_c_loss, sft_loss, SftCOutput, SftExample, SftOutput,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::sigmoid;

/// Penalty keeping the negatives' per-token NLL above a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SftConfig {
    pub lambda: f64,
    /// Threshold `C` in nats per token.
    pub threshold: f64,
    /// Apply the ReLU to each negative separately instead of to the batch mean.
    pub per_sample: bool,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            threshold: 4.0,
            per_sample: false,
        }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.threshold >= 0.0 && self.threshold.is_finite()) {
            return Err(Error::Config(format!(
                "threshold must be finite and >= 0, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpoConfig {
    pub beta: f64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self { beta: 0.1 }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta must be finite and > 0, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoolingConfig {
    /// Easiness baseline `ℓ_floor` in nats per token.
    pub floor: f64,
    pub temperature: f64,
    /// Drop pairs whose loser is already below the floor.
    pub hard_filter: bool,
    /// Replace the confidence-derived weight with a constant.
    pub fixed_weight: Option<f64>,
    /// Let the gradient flow through the weight. Only for error analysis;
    /// the training path always treats the weight as a constant.
    pub through_weight: bool,
}

impl Default for CoolingConfig {
    fn default() -> Self {
        Self {
            floor: -3.0,
            temperature: 1.0,
            hard_filter: false,
            fixed_weight: None,
            through_weight: false,
        }
    }
}

impl CoolingConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.floor.is_finite() {
            return Err(Error::Config("cooling floor must be finite".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "cooling temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if let Some(w) = self.fixed_weight {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::Config(format!(
                    "fixed cooling weight must lie in [0, 1], got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// `σ((ℓ̄ − ℓ_floor)/τ)`, or the fixed override when one is set.
pub fn cooling_weight(avg_log_prob: f64, cfg: &CoolingConfig) -> f64 {
    match cfg.fixed_weight {
        Some(w) => w,
        None => sigmoid((avg_log_prob - cfg.floor) / cfg.temperature),
    }
}
