//! Experiment configuration file.
//!
//! TOML with one level of sections. Only `[experiment]` is required; every
//! other section and key falls back to the library defaults.
//!
//! ```toml
//! [experiment]
//! name = "default"
//! seed = 0
//! objective = "cw-dpo"          # dpo | cw-dpo | focal-dpo
//! ablations = ["no-cw-dpo"]     # optional
//!
//! [data]
//! corpus_size = 2000
//!
//! [training]
//! t1 = 500
//! ```

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use cwdpo_core::data::{DatasetSpec, MixConfig, Tier};
use cwdpo_core::objectives::{CoolingConfig, DpoConfig, SftConfig};
use cwdpo_core::policy::Architecture;
use cwdpo_core::seed::sub_seed;
use cwdpo_core::trainer::{EarlyStopRule, Optimizer, Stage1Mode, Stage2Kind, TrainingConfig};

use crate::error::{CliError, CliResult};

/// One of the six component switches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ablation {
    /// Skip Stage 1; preference optimisation starts from the initial policy.
    NoSmoothSft,
    /// Stage 1 is plain SFT with no negative penalty.
    NoNegativeSampling,
    /// Stage 1 steps on the violated constraint instead of the soft penalty.
    HardConstraint,
    /// Skip Stage 2.
    NoCwDpo,
    /// Pin the cooling weight to a constant.
    FixedCoolingWeight(f64),
    /// Keep every loser, however easy.
    NoNegativeFiltering,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationStage {
    Stage1,
    Stage2,
}

impl Ablation {
    pub const NAMES: [&'static str; 6] = [
        "no-smooth-sft",
        "no-negative-sampling",
        "hard-constraint",
        "no-cw-dpo",
        "fixed-cooling-weight",
        "no-negative-filtering",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::NoSmoothSft => Self::NAMES[0],
            Self::NoNegativeSampling => Self::NAMES[1],
            Self::HardConstraint => Self::NAMES[2],
            Self::NoCwDpo => Self::NAMES[3],
            Self::FixedCoolingWeight(_) => Self::NAMES[4],
            Self::NoNegativeFiltering => Self::NAMES[5],
        }
    }

    pub fn stage(&self) -> AblationStage {
        match self {
            Self::NoSmoothSft | Self::NoNegativeSampling | Self::HardConstraint => {
                AblationStage::Stage1
            }
            _ => AblationStage::Stage2,
        }
    }

    fn apply(&self, cfg: &mut TrainingConfig) -> Result<(), String> {
        let needs_cooling = |cfg: &TrainingConfig| {
            if cfg.stage2 == Stage2Kind::CwDpo {
                Ok(())
            } else {
                Err(format!(
                    "ablation {} needs objective = \"cw-dpo\"",
                    self.name()
                ))
            }
        };
        match *self {
            Self::NoSmoothSft => cfg.t1 = 0,
            Self::NoNegativeSampling => cfg.stage1_mode = Stage1Mode::Sft,
            Self::HardConstraint => cfg.stage1_mode = Stage1Mode::HardConstraint,
            Self::NoCwDpo => cfg.t2 = 0,
            Self::FixedCoolingWeight(w) => {
                needs_cooling(cfg)?;
                cfg.cooling.fixed_weight = Some(w);
            }
            Self::NoNegativeFiltering => {
                needs_cooling(cfg)?;
                cfg.cooling.hard_filter = false;
            }
        }
        Ok(())
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::FixedCoolingWeight(w) => write!(f, "{}={w:?}", self.name()),
            _ => f.write_str(self.name()),
        }
    }
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (name, value) = match s.split_once('=') {
            Some((n, v)) => (n.trim(), Some(v.trim())),
            None => (s.trim(), None),
        };
        let plain = |a: Ablation| match value {
            None => Ok(a),
            Some(_) => Err(format!("ablation {name} takes no value")),
        };
        match name {
            "no-smooth-sft" => plain(Self::NoSmoothSft),
            "no-negative-sampling" => plain(Self::NoNegativeSampling),
            "hard-constraint" => plain(Self::HardConstraint),
            "no-cw-dpo" => plain(Self::NoCwDpo),
            "no-negative-filtering" => plain(Self::NoNegativeFiltering),
            "fixed-cooling-weight" => {
                let v = value
                    .ok_or("fixed-cooling-weight needs a value, e.g. fixed-cooling-weight=0.7")?;
                let w: f64 = v
                    .parse()
                    .map_err(|_| format!("fixed-cooling-weight value {v:?} is not a number"))?;
                if !(0.0..=1.0).contains(&w) {
                    return Err(format!("fixed-cooling-weight must lie in [0, 1], got {w}"));
                }
                Ok(Self::FixedCoolingWeight(w))
            }
            _ => Err(format!(
                "unknown ablation {name:?}; expected one of {}",
                Self::NAMES.join(", ")
            )),
        }
    }
}

impl Serialize for Ablation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Ablation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// At most one switch per stage.
pub fn check_exclusive(ablations: &[Ablation]) -> Result<(), String> {
    for stage in [AblationStage::Stage1, AblationStage::Stage2] {
        let hits: Vec<String> = ablations
            .iter()
            .filter(|a| a.stage() == stage)
            .map(|a| a.to_string())
            .collect();
        if hits.len() > 1 {
            let n = if stage == AblationStage::Stage1 { 1 } else { 2 };
            return Err(format!(
                "ablations {} all switch Stage {n}; pick one",
                hits.join(" and ")
            ));
        }
    }
    Ok(())
}

/// A cell of an ablation grid: the unablated baseline or one switch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridVariant {
    Baseline,
    Ablation(Ablation),
}

impl GridVariant {
    /// Directory-safe label.
    pub fn label(&self) -> String {
        match self {
            Self::Baseline => "baseline".into(),
            Self::Ablation(a) => a.to_string().replace('=', "-"),
        }
    }
}

impl fmt::Display for GridVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Baseline => f.write_str("baseline"),
            Self::Ablation(a) => a.fmt(f),
        }
    }
}

impl Serialize for GridVariant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GridVariant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.trim() == "baseline" {
            return Ok(Self::Baseline);
        }
        s.parse()
            .map(Self::Ablation)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub seed: u64,
    pub objective: Stage2Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ablations: Vec<Ablation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// 0 together with `hidden_dim = 0` selects the linear policy.
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub window: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let a = Architecture::default();
        Self {
            embed_dim: a.embed_dim,
            hidden_dim: a.hidden_dim,
            window: a.window,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    GradientDescent,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub lr: f64,
    pub stage2_lr: Option<f64>,
    pub t1: usize,
    pub t2: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub probe_interval: usize,
    pub trace_interval: usize,
    pub stage1_mode: Stage1Mode,
    pub stage1_tiers: Vec<Tier>,
    pub label_smoothing: f64,
    pub focal_gamma: f64,
    pub curated_examples: usize,
    pub curated_per_tier: usize,
    pub snapshot_examples: usize,
    pub snapshot_top_k: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let c = TrainingConfig::default();
        let Optimizer::Adam {
            beta1,
            beta2,
            epsilon,
        } = Optimizer::adam()
        else {
            unreachable!()
        };
        Self {
            lr: c.lr,
            stage2_lr: c.stage2_lr,
            t1: c.t1,
            t2: c.t2,
            batch_size: c.batch_size,
            optimizer: OptimizerKind::GradientDescent,
            adam_beta1: beta1,
            adam_beta2: beta2,
            adam_epsilon: epsilon,
            probe_interval: c.probe_interval,
            trace_interval: c.trace_interval,
            stage1_mode: c.stage1_mode,
            stage1_tiers: c.stage1_tiers,
            label_smoothing: c.label_smoothing,
            focal_gamma: c.focal_gamma,
            curated_examples: c.curated_examples,
            curated_per_tier: c.curated_per_tier,
            snapshot_examples: c.snapshot_examples,
            snapshot_top_k: c.snapshot_top_k,
        }
    }
}

/// Dataset-loser tier weights; the dataset share itself is `[data] mix`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixSection {
    pub tier_weights: [f64; 3],
}

impl Default for MixSection {
    fn default() -> Self {
        Self {
            tier_weights: MixConfig::default().tier_weights,
        }
    }
}

/// Which optional artifacts a run writes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    /// Per-probe checkpoints, needed by `dynamics`.
    pub checkpoints: bool,
    /// Top-k next-token distribution snapshots.
    pub snapshots: bool,
    /// Print `summary.json` to stdout when the run ends.
    pub print_summary: bool,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            checkpoints: true,
            snapshots: true,
            print_summary: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationGrid {
    pub variants: Vec<GridVariant>,
}

impl Default for AblationGrid {
    /// Baseline plus all six switches, with the cooling weight pinned at 0.7.
    fn default() -> Self {
        let mut variants = vec![GridVariant::Baseline];
        variants.extend(
            [
                Ablation::NoSmoothSft,
                Ablation::NoNegativeSampling,
                Ablation::HardConstraint,
                Ablation::NoCwDpo,
                Ablation::FixedCoolingWeight(0.7),
                Ablation::NoNegativeFiltering,
            ]
            .map(GridVariant::Ablation),
        );
        Self { variants }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub data: DatasetSpec,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub sft: SftConfig,
    #[serde(default)]
    pub dpo: DpoConfig,
    #[serde(default)]
    pub cooling: CoolingConfig,
    #[serde(default)]
    pub mix: MixSection,
    #[serde(default)]
    pub early_stop: EarlyStopRule,
    #[serde(default)]
    pub report: ReportSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablation_grid: Option<AblationGrid>,
}

/// Library-level settings of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedRun {
    pub training: TrainingConfig,
    pub data: DatasetSpec,
}

impl ExperimentConfig {
    /// A config with every section at its default.
    pub fn with_defaults(name: &str, seed: u64, objective: Stage2Kind) -> Self {
        Self {
            experiment: ExperimentSection {
                name: name.into(),
                seed,
                objective,
                out: None,
                ablations: Vec::new(),
            },
            data: DatasetSpec::default(),
            model: ModelSection::default(),
            training: TrainingSection::default(),
            sft: SftConfig::default(),
            dpo: DpoConfig::default(),
            cooling: CoolingConfig::default(),
            mix: MixSection::default(),
            early_stop: EarlyStopRule::default(),
            report: ReportSection::default(),
            ablation_grid: None,
        }
    }

    /// Parse and validate; `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str) -> CliResult<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| CliError::config(origin, e.to_string().trim_end()))?;
        cfg.validate()
            .map_err(|detail| CliError::config(origin, detail))?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::config("echo", e.to_string()))
    }

    /// Every run this file describes is well formed.
    pub fn validate(&self) -> Result<(), String> {
        for cfg in self.expand() {
            cfg.resolve()?;
        }
        Ok(())
    }

    /// One config per run: the grid cells if a grid is present, otherwise self.
    /// Each cell carries the base ablations plus its own switch and no grid.
    pub fn expand(&self) -> Vec<ExperimentConfig> {
        let Some(grid) = &self.ablation_grid else {
            return vec![self.clone()];
        };
        grid.variants
            .iter()
            .map(|v| {
                let mut cell = self.clone();
                cell.ablation_grid = None;
                cell.experiment.name = format!("{}/{}", self.experiment.name, v.label());
                if let GridVariant::Ablation(a) = v {
                    cell.experiment.ablations.push(*a);
                }
                cell
            })
            .collect()
    }

    /// Grid cell labels, in run order; empty without a grid.
    pub fn grid_labels(&self) -> Vec<String> {
        self.ablation_grid
            .as_ref()
            .map(|g| g.variants.iter().map(GridVariant::label).collect())
            .unwrap_or_default()
    }

    /// Library configs with ablations applied; the data seed is derived from
    /// the experiment seed.
    pub fn resolve(&self) -> Result<ResolvedRun, String> {
        check_exclusive(&self.experiment.ablations)?;
        let t = &self.training;
        let data = DatasetSpec {
            seed: sub_seed(self.experiment.seed, "data"),
            ..self.data.clone()
        };
        let optimizer = match t.optimizer {
            OptimizerKind::GradientDescent => Optimizer::GradientDescent,
            OptimizerKind::Adam => Optimizer::Adam {
                beta1: t.adam_beta1,
                beta2: t.adam_beta2,
                epsilon: t.adam_epsilon,
            },
        };
        let mut training = TrainingConfig {
            architecture: Architecture {
                vocab_size: data.vocab_size,
                embed_dim: self.model.embed_dim,
                hidden_dim: self.model.hidden_dim,
                window: self.model.window,
            },
            lr: t.lr,
            stage2_lr: t.stage2_lr,
            t1: t.t1,
            t2: t.t2,
            batch_size: t.batch_size,
            optimizer,
            seed: self.experiment.seed,
            probe_interval: t.probe_interval,
            trace_interval: t.trace_interval,
            stage1_mode: t.stage1_mode,
            stage1_tiers: t.stage1_tiers.clone(),
            label_smoothing: t.label_smoothing,
            stage2: self.experiment.objective,
            focal_gamma: t.focal_gamma,
            sft: self.sft,
            dpo: self.dpo,
            cooling: self.cooling,
            mix: MixConfig {
                rho: data.mix,
                tier_weights: self.mix.tier_weights,
            },
            early_stop: self.early_stop,
            curated_examples: t.curated_examples,
            curated_per_tier: t.curated_per_tier,
            snapshot_examples: t.snapshot_examples,
            snapshot_top_k: t.snapshot_top_k,
        };
        for a in &self.experiment.ablations {
            a.apply(&mut training)?;
        }
        data.validate().map_err(|e| e.to_string())?;
        training.validate().map_err(|e| e.to_string())?;
        Ok(ResolvedRun { training, data })
    }
}
