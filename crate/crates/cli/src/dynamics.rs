//! `dynamics`: one-step influence checks, component norms and the
//! regularisation profile, computed from a run bundle's checkpoints.

use std::path::{Path, PathBuf};

use serde::Serialize;

use cwdpo_core::data::{read_examples, Tier};
use cwdpo_core::dynamics::{
    predict_influence, probe_pairs, regularization_profile, step_halving_ratio,
    track_component_norms, write_component_norms_csv, ComponentNorms, InfluenceLoss, ProbePair,
    RegularizationRow,
};
use cwdpo_core::policy::{PolicyParameters, ReferenceSnapshot};
use cwdpo_core::trainer::{parse_checkpoint_file_name, Optimizer};

use crate::config::{ExperimentConfig, ResolvedRun};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone)]
pub struct DynamicsOptions {
    /// Step size of the one-step influence check.
    pub eta: f64,
    /// Number of `(updating, observed)` pairs.
    pub pairs: usize,
    /// Tier of the updating pair's loser.
    pub tier: Tier,
    /// Also tabulate the step-halving error ratio over a range of step sizes.
    pub eta_sweep: bool,
    /// Loser-confidence grid size of the regularisation profile.
    pub grid_points: usize,
    /// Pairs used for the regularisation profile.
    pub profile_pairs: usize,
    /// Output directory; `<bundle>/dynamics` by default.
    pub out: Option<PathBuf>,
}

impl Default for DynamicsOptions {
    fn default() -> Self {
        Self {
            eta: 1e-4,
            pairs: 20,
            tier: Tier::Medium,
            eta_sweep: false,
            grid_points: 41,
            profile_pairs: 5,
            out: None,
        }
    }
}

/// Largest step of the sweep; each further row halves it.
pub const SWEEP_START: f64 = 1e-2;
pub const SWEEP_ROWS: usize = 4;

/// One row of the influence verification table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfluenceRow {
    pub loss: &'static str,
    pub pair_id: usize,
    pub eta: f64,
    pub contraction: f64,
    pub predicted: f64,
    pub actual: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HalvingRow {
    pub loss: &'static str,
    pub pair_id: usize,
    pub eta: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone)]
pub struct DynamicsReport {
    pub out: PathBuf,
    pub checkpoint_steps: Vec<(u8, usize)>,
    pub influence: Vec<InfluenceRow>,
    pub halving: Vec<HalvingRow>,
    pub component_norms: Vec<ComponentNorms>,
    pub profile: Vec<RegularizationRow>,
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

impl DynamicsReport {
    /// Median relative error of the influence prediction, per loss.
    pub fn median_relative_error(&self, loss: &str) -> f64 {
        median(
            &mut self
                .influence
                .iter()
                .filter(|r| r.loss == loss)
                .map(|r| r.relative_error)
                .collect::<Vec<_>>(),
        )
    }

    pub fn max_relative_error(&self) -> f64 {
        self.influence
            .iter()
            .map(|r| r.relative_error)
            .fold(0.0, f64::max)
    }

    /// Median step-halving ratio at `eta`, over every pair and loss.
    pub fn median_halving_ratio(&self, eta: f64) -> f64 {
        median(
            &mut self
                .halving
                .iter()
                .filter(|r| r.eta == eta)
                .map(|r| r.ratio)
                .collect::<Vec<_>>(),
        )
    }

    pub fn sweep_etas(&self) -> Vec<f64> {
        let mut etas: Vec<f64> = self.halving.iter().map(|r| r.eta).collect();
        etas.sort_by(|a, b| b.total_cmp(a));
        etas.dedup();
        etas
    }

    pub fn max_profile_error(&self) -> f64 {
        self.profile
            .iter()
            .map(|r| r.norm_ratio_error)
            .fold(0.0, f64::max)
    }
}

fn load_params(path: &Path) -> CliResult<PolicyParameters> {
    if !path.exists() {
        return Err(CliError::Input(format!(
            "bundle is missing {}",
            path.display()
        )));
    }
    Ok(PolicyParameters::load(path)?)
}

/// Every `stageN_stepM.cwdp` in the bundle, in training order.
pub fn list_checkpoints(bundle: &Path) -> CliResult<Vec<((u8, usize), PathBuf)>> {
    let dir = bundle.join("checkpoints");
    let mut found = Vec::new();
    if dir.is_dir() {
        for entry in std::fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))? {
            let path = entry.map_err(|e| CliError::io(&dir, e))?.path();
            if let Some(key) = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(parse_checkpoint_file_name)
            {
                found.push((key, path));
            }
        }
    }
    found.sort();
    Ok(found)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let fail = |e: csv::Error| CliError::Input(format!("writing {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    for r in rows {
        w.serialize(r).map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

fn bundle_config(bundle: &Path) -> CliResult<ResolvedRun> {
    let path = bundle.join("config.toml");
    if !path.exists() {
        return Err(CliError::Input(format!(
            "{} is not a run bundle (no config.toml)",
            bundle.display()
        )));
    }
    ExperimentConfig::load(&path)?
        .resolve()
        .map_err(|d| CliError::config(path.display().to_string(), d))
}

/// Run the dynamics suite on `bundle` and write its tables.
pub fn run_dynamics(bundle: &Path, opts: &DynamicsOptions) -> CliResult<DynamicsReport> {
    let ResolvedRun {
        training,
        data: spec,
    } = bundle_config(bundle)?;
    if let Optimizer::Adam { .. } = training.optimizer {
        return Err(CliError::Capability(
            "this bundle was trained with Adam; the one-step analysis assumes plain gradient updates".into(),
        ));
    }
    if !(opts.eta > 0.0 && opts.eta.is_finite()) {
        return Err(CliError::Usage(format!(
            "--eta must be finite and > 0, got {}",
            opts.eta
        )));
    }
    let checkpoints = list_checkpoints(bundle)?;
    if checkpoints.is_empty() {
        return Err(CliError::Input(format!(
            "{} holds no checkpoints",
            bundle.display()
        )));
    }
    let reference =
        ReferenceSnapshot::new(&load_params(&bundle.join("checkpoints/reference.cwdp"))?);
    let current = load_params(&bundle.join("checkpoints/final.cwdp"))?;

    let corpus = read_examples(&bundle.join("corpus.jsonl"))?;
    let split = spec.stage1_count().min(corpus.len());
    let stage2 = if corpus.len() - split >= 2 {
        &corpus[split..]
    } else {
        &corpus[..]
    };
    let pairs: Vec<ProbePair> = probe_pairs(stage2, opts.tier, opts.pairs)?;

    let losses = [
        InfluenceLoss::Sft,
        InfluenceLoss::Preference {
            objective: training.objective(),
            reference: reference.clone(),
        },
    ];
    let mut influence = Vec::new();
    for loss in &losses {
        for pair in &pairs {
            let b = predict_influence(&current, &pair.update, &pair.observed, loss, opts.eta)?;
            influence.push(InfluenceRow {
                loss: loss.name(),
                pair_id: pair.id,
                eta: opts.eta,
                contraction: b.contraction,
                predicted: b.predicted,
                actual: b.actual,
                relative_error: b.relative_error(),
            });
        }
    }

    let mut halving = Vec::new();
    if opts.eta_sweep {
        let mut eta = SWEEP_START;
        for _ in 0..SWEEP_ROWS {
            for loss in &losses {
                for pair in &pairs {
                    let ratio =
                        step_halving_ratio(&current, &pair.update, &pair.observed, loss, eta)?;
                    halving.push(HalvingRow {
                        loss: loss.name(),
                        pair_id: pair.id,
                        eta,
                        ratio,
                    });
                }
            }
            eta /= 2.0;
        }
    }

    // Component norms follow the preference loss over Stage-2 checkpoints,
    // or over every checkpoint when Stage 2 was skipped.
    let stage2: Vec<&((u8, usize), PathBuf)> =
        checkpoints.iter().filter(|(k, _)| k.0 == 2).collect();
    let series: Vec<&((u8, usize), PathBuf)> = if stage2.len() >= 2 {
        stage2
    } else {
        checkpoints.iter().collect()
    };
    let component_norms = if series.len() >= 2 {
        let loaded = series
            .iter()
            .map(|((_, step), path)| Ok((*step, load_params(path)?)))
            .collect::<CliResult<Vec<_>>>()?;
        track_component_norms(&loaded, &pairs, &losses[1], opts.eta)?
    } else {
        Vec::new()
    };

    let profile_pairs: Vec<_> = pairs
        .iter()
        .take(opts.profile_pairs.max(1))
        .map(|p| p.update.clone())
        .collect();
    let profile = regularization_profile(
        &current,
        &reference,
        &profile_pairs,
        training.dpo.beta,
        &training.cooling,
        opts.grid_points,
    )?;

    let out = opts.out.clone().unwrap_or_else(|| bundle.join("dynamics"));
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    write_csv(&out.join("influence.csv"), &influence)?;
    if opts.eta_sweep {
        write_csv(&out.join("step_halving.csv"), &halving)?;
    }
    write_component_norms_csv(&out.join("component_norms.csv"), &component_norms)?;
    write_csv(&out.join("regularization_profile.csv"), &profile)?;

    Ok(DynamicsReport {
        out,
        checkpoint_steps: checkpoints.into_iter().map(|(k, _)| k).collect(),
        influence,
        halving,
        component_norms,
        profile,
    })
}
