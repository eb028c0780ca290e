use serde::{Deserialize, Serialize};

use crate::data::{MixConfig, Tier};
use crate::error::{Error, Result};
use crate::objectives::{CoolingConfig, DpoConfig, PreferenceObjective, SftConfig};
use crate::policy::Architecture;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Optimizer {
    #[default]
    GradientDescent,
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Optimizer {
    pub fn adam() -> Self {
        Self::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// What Stage 1 minimises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage1Mode {
    /// NLL plus the soft negative-likelihood penalty.
    SmoothedSft,
    /// NLL only.
    Sft,
    /// Step on the constraint alone whenever it is violated, else on the NLL.
    HardConstraint,
    /// Label-smoothed cross-entropy with the given smoothing (baseline).
    LabelSmoothing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage2Kind {
    Dpo,
    CwDpo,
    FocalDpo,
}

/// Stop when the probe-positive `Δlog p` has not beaten its best by
/// `threshold` for `patience` consecutive probes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EarlyStopRule {
    pub enabled: bool,
    pub patience: usize,
    pub threshold: f64,
}

impl Default for EarlyStopRule {
    fn default() -> Self {
        Self {
            enabled: false,
            patience: 4,
            threshold: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub architecture: Architecture,
    pub lr: f64,
    /// Stage-2 learning rate; `None` reuses `lr`.
    #[serde(default)]
    pub stage2_lr: Option<f64>,
    pub t1: usize,
    pub t2: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub probe_interval: usize,
    /// Steps between curriculum measurements on the curated negatives.
    pub trace_interval: usize,
    pub stage1_mode: Stage1Mode,
    /// Dataset negative tiers fed to the Stage-1 penalty.
    pub stage1_tiers: Vec<Tier>,
    pub label_smoothing: f64,
    pub stage2: Stage2Kind,
    pub focal_gamma: f64,
    pub sft: SftConfig,
    pub dpo: DpoConfig,
    pub cooling: CoolingConfig,
    pub mix: MixConfig,
    pub early_stop: EarlyStopRule,
    pub curated_examples: usize,
    pub curated_per_tier: usize,
    pub snapshot_examples: usize,
    pub snapshot_top_k: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::default(),
            lr: 0.2,
            stage2_lr: Some(4.0),
            t1: 500,
            t2: 500,
            batch_size: 32,
            optimizer: Optimizer::GradientDescent,
            seed: 0,
            probe_interval: 25,
            trace_interval: 10,
            stage1_mode: Stage1Mode::SmoothedSft,
            stage1_tiers: vec![Tier::Hard],
            label_smoothing: 0.1,
            stage2: Stage2Kind::CwDpo,
            focal_gamma: 2.0,
            sft: SftConfig::default(),
            dpo: DpoConfig::default(),
            cooling: CoolingConfig::default(),
            mix: MixConfig::default(),
            early_stop: EarlyStopRule::default(),
            curated_examples: 10,
            curated_per_tier: 4,
            snapshot_examples: 3,
            snapshot_top_k: 5,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be finite and > 0, got {}",
                self.lr
            )));
        }
        if let Some(lr) = self.stage2_lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!(
                    "stage2_lr must be finite and > 0, got {lr}"
                )));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.probe_interval == 0 || self.trace_interval == 0 {
            return Err(Error::Config(
                "probe and trace intervals must be >= 1".into(),
            ));
        }
        if self.stage1_tiers.is_empty() {
            return Err(Error::Config(
                "stage1_tiers must name at least one tier".into(),
            ));
        }
        if let Optimizer::Adam {
            beta1,
            beta2,
            epsilon,
        } = self.optimizer
        {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0) {
                return Err(Error::Config(
                    "adam needs beta1, beta2 in [0, 1) and epsilon > 0".into(),
                ));
            }
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "label_smoothing must lie in [0, 1), got {}",
                self.label_smoothing
            )));
        }
        self.sft.validate()?;
        self.mix.validate()?;
        self.objective().validate()
    }

    pub fn stage2_learning_rate(&self) -> f64 {
        self.stage2_lr.unwrap_or(self.lr)
    }

    pub fn objective(&self) -> PreferenceObjective {
        match self.stage2 {
            Stage2Kind::Dpo => PreferenceObjective::Dpo { dpo: self.dpo },
            Stage2Kind::CwDpo => PreferenceObjective::CwDpo {
                dpo: self.dpo,
                cooling: self.cooling,
            },
            Stage2Kind::FocalDpo => PreferenceObjective::FocalDpo {
                dpo: self.dpo,
                gamma: self.focal_gamma,
            },
        }
    }
}
