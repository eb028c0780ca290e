//! On-disk run bundle.
//!
//! ```text
//! config.toml            echo of the experiment configuration (written by the caller)
//! checkpoints/*.cwdp     parameters at every probe, plus reference.cwdp and final.cwdp
//! steps.csv              one row per update
//! probes.jsonl           one ProbeReport per checkpoint
//! curriculum.csv         cooling weight of every curated negative over Stage 2
//! snapshots_stage1.csv   top-k next-token distributions at the reference
//! snapshots_final.csv    the same after Stage 2
//! corpus.jsonl           training corpus
//! probe.jsonl            probe set
//! summary.json           fingerprints and final metrics
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    stage1_negative_nll, RunArtifacts, StepLog, TrainerState, TrainingConfig, TrainingData,
};
use crate::data::{write_examples, DatasetSpec, LabeledExample, Tier};
use crate::diagnostics::{
    cooling_weight_trace, csv_error, write_jsonl, write_snapshots_csv, ProbeReport,
};
use crate::error::{Error, Result};

pub const STEPS_HEADER: &str = "step,stage,loss,mean_wc,mean_a,mean_delta_w,mean_delta_l,wc_easy,wc_medium,wc_hard,negative_nll";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub data_seed: u64,
    pub parameter_count: usize,
    pub reference_fingerprint: String,
    pub final_fingerprint: String,
    pub probe_fingerprint: String,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub stopped_early_at: Option<usize>,
    pub stage1_final: ProbeReport,
    pub final_probe: ProbeReport,
    /// Mean per-token NLL over every Stage-1 negative at the reference.
    pub stage1_negative_nll: f64,
    /// First traced Stage-2 step at which each tier's mean cooling weight fell below 1/2.
    pub half_weight_step: BTreeMap<Tier, Option<usize>>,
    pub final_mean_weight: BTreeMap<Tier, f64>,
}

pub(crate) fn examples_fingerprint(examples: &[LabeledExample]) -> Result<String> {
    let mut h = Sha256::new();
    for ex in examples {
        h.update(serde_json::to_vec(ex)?);
        h.update(b"\n");
    }
    Ok(hex::encode(h.finalize()))
}

impl RunSummary {
    pub(crate) fn build(
        cfg: &TrainingConfig,
        spec: &DatasetSpec,
        state: &TrainerState,
        data: &TrainingData,
    ) -> Result<Self> {
        let reference = state.reference.as_ref().ok_or_else(|| {
            Error::Protocol("summary requested before the reference snapshot".into())
        })?;
        let last = |stage: u8| {
            state
                .probes
                .iter()
                .rev()
                .find(|p| p.stage == stage)
                .cloned()
                .ok_or_else(|| Error::Protocol(format!("no Stage-{stage} probe recorded")))
        };
        let trace = cooling_weight_trace(&state.curriculum);
        Ok(Self {
            seed: cfg.seed,
            data_seed: spec.seed,
            parameter_count: state.params.len(),
            reference_fingerprint: reference.fingerprint(),
            final_fingerprint: state.params.fingerprint(),
            probe_fingerprint: examples_fingerprint(&data.probe)?,
            stage1_steps: state.steps.iter().filter(|s| s.stage == 1).count(),
            stage2_steps: state.steps.iter().filter(|s| s.stage == 2).count(),
            stopped_early_at: state.stopped_early_at,
            stage1_final: last(1)?,
            final_probe: last(2)?,
            stage1_negative_nll: stage1_negative_nll(reference.params(), data, cfg)?,
            half_weight_step: trace.half_weight_step.clone(),
            final_mean_weight: Tier::ALL
                .iter()
                .filter_map(|&t| trace.final_mean(t).map(|m| (t, m)))
                .collect(),
        })
    }
}

pub fn write_steps_csv(path: &Path, steps: &[StepLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for s in steps {
        w.serialize(s).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_steps_csv(path: &Path) -> Result<Vec<StepLog>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    r.deserialize()
        .map(|row| {
            row.map_err(|e| Error::Format {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })
        })
        .collect()
}

/// Optional parts of a bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BundleOptions {
    /// Per-probe checkpoints; `reference.cwdp` and `final.cwdp` are always written.
    pub checkpoints: bool,
    pub snapshots: bool,
}

impl Default for BundleOptions {
    fn default() -> Self {
        Self {
            checkpoints: true,
            snapshots: true,
        }
    }
}

/// File name of the checkpoint taken at `step` of `stage`.
pub fn checkpoint_file_name(stage: u8, step: usize) -> String {
    format!("stage{stage}_step{step:05}.cwdp")
}

/// Inverse of [`checkpoint_file_name`].
pub fn parse_checkpoint_file_name(name: &str) -> Option<(u8, usize)> {
    let rest = name.strip_prefix("stage")?.strip_suffix(".cwdp")?;
    let (stage, step) = rest.split_once("_step")?;
    Some((stage.parse().ok()?, step.parse().ok()?))
}

/// Write the artifacts of `run` under `dir`; `config_echo` becomes `config.toml`.
pub fn write_bundle(
    dir: &Path,
    run: &RunArtifacts,
    config_echo: Option<&str>,
    options: BundleOptions,
) -> Result<()> {
    let ck = dir.join("checkpoints");
    std::fs::create_dir_all(&ck)?;
    if let Some(text) = config_echo {
        std::fs::write(dir.join("config.toml"), text)?;
    }
    if options.checkpoints {
        for c in &run.state.checkpoints {
            c.params
                .save(&ck.join(checkpoint_file_name(c.stage, c.step)))?;
        }
    }
    if let Some(r) = &run.state.reference {
        r.params().save(&ck.join("reference.cwdp"))?;
    }
    run.state.params.save(&ck.join("final.cwdp"))?;
    write_steps_csv(&dir.join("steps.csv"), &run.state.steps)?;
    write_jsonl(&dir.join("probes.jsonl"), &run.state.probes)?;
    let mut w = csv::Writer::from_path(dir.join("curriculum.csv")).map_err(csv_error)?;
    for r in &run.state.curriculum {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    if options.snapshots {
        write_snapshots_csv(&dir.join("snapshots_stage1.csv"), &run.stage1_snapshots)?;
        write_snapshots_csv(&dir.join("snapshots_final.csv"), &run.final_snapshots)?;
    }
    write_examples(&dir.join("corpus.jsonl"), &run.data.corpus)?;
    write_examples(&dir.join("probe.jsonl"), &run.data.probe)?;
    let mut summary = serde_json::to_string_pretty(&run.summary)?;
    summary.push('\n');
    std::fs::write(dir.join("summary.json"), summary)?;
    Ok(())
}
