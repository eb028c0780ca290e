//! `run`: train one experiment, or every cell of an ablation grid, and write
//! the run bundles.

use std::path::{Path, PathBuf};

use cwdpo_core::trainer::{train_two_stage, write_bundle, BundleOptions, RunSummary};
use cwdpo_core::Error as CoreError;

use crate::config::{Ablation, ExperimentConfig};
use crate::error::{CliError, CliResult};

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub ablations: Vec<Ablation>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub name: String,
    pub dir: PathBuf,
    pub summary: RunSummary,
}

/// Bundle directory when neither the file nor the command line names one.
pub fn default_out(cfg: &ExperimentConfig) -> PathBuf {
    Path::new("runs").join(&cfg.experiment.name)
}

/// The file's config with overrides folded in, validated again.
pub fn apply_overrides(
    mut cfg: ExperimentConfig,
    o: &RunOverrides,
    origin: &str,
) -> CliResult<ExperimentConfig> {
    if let Some(seed) = o.seed {
        cfg.experiment.seed = seed;
    }
    if let Some(out) = &o.out {
        cfg.experiment.out = Some(out.clone());
    }
    cfg.experiment.ablations.extend(o.ablations.iter().copied());
    cfg.validate().map_err(|d| CliError::config(origin, d))?;
    Ok(cfg)
}

/// Train every run described by `cfg` and write one bundle each.
///
/// Without a grid the bundle goes to the output directory itself; with one,
/// each cell writes to a subdirectory named after its variant.
pub fn run_experiment(cfg: &ExperimentConfig) -> CliResult<Vec<RunOutcome>> {
    let root = cfg
        .experiment
        .out
        .clone()
        .unwrap_or_else(|| default_out(cfg));
    let labels = cfg.grid_labels();
    let cells = cfg.expand();
    let mut outcomes = Vec::with_capacity(cells.len());
    for (i, mut cell) in cells.into_iter().enumerate() {
        let dir = match labels.get(i) {
            Some(label) => root.join(label),
            None => root.clone(),
        };
        cell.experiment.out = Some(dir.clone());
        outcomes.push(run_one(&cell, &dir)?);
    }
    Ok(outcomes)
}

fn run_one(cfg: &ExperimentConfig, dir: &Path) -> CliResult<RunOutcome> {
    let resolved = cfg
        .resolve()
        .map_err(|d| CliError::config(&cfg.experiment.name, d))?;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let run = train_two_stage(&resolved.training, &resolved.data).map_err(|e| {
        if let CoreError::Divergence { batch, .. } = &e {
            // Best effort: the divergence itself is the error worth reporting.
            let _ = std::fs::write(dir.join("divergence_batch.jsonl"), batch.join("\n") + "\n");
        }
        CliError::from(e)
    })?;
    let echo = cfg.to_toml()?;
    let options = BundleOptions {
        checkpoints: cfg.report.checkpoints,
        snapshots: cfg.report.snapshots,
    };
    write_bundle(dir, &run, Some(&echo), options).map_err(|e| match e {
        CoreError::Io(source) => CliError::io(dir, source),
        e => e.into(),
    })?;
    Ok(RunOutcome {
        name: cfg.experiment.name.clone(),
        dir: dir.to_path_buf(),
        summary: run.summary,
    })
}
