//! The two-stage protocol: SFT with a negative-likelihood penalty, a frozen
//! reference snapshot, then (cooled) preference optimisation.

mod bundle;
mod config;

pub use bundle::{
    checkpoint_file_name, parse_checkpoint_file_name, read_steps_csv, write_bundle, BundleOptions,
    RunSummary, STEPS_HEADER,
};
pub use config::{EarlyStopRule, Optimizer, Stage1Mode, Stage2Kind, TrainingConfig};

use serde::{Deserialize, Serialize};

use crate::data::{
    build_preference_batch, build_probe_set, generate_corpus, split_corpus, DatasetSpec, Grammar,
    LabeledExample, PreferencePair, Tier,
};
use crate::diagnostics::{
    curated_negatives, measure_curriculum, probe_report, top_k_snapshots, CurriculumRecord,
    DistributionSnapshot, ProbeReport,
};
use crate::error::{Error, Result};
use crate::objectives::{
    label_smoothing_sft_loss, negative_nll, preference_batch_loss, sft_c_loss, sft_loss,
    LossBreakdown, SftExample,
};
use crate::policy::{PolicyParameters, ReferenceSnapshot};
use crate::seed::{indexed_seed, sub_seed};

/// Everything the trainer reads: both corpus halves, the probe set and the
/// curated curriculum negatives.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub corpus: Vec<LabeledExample>,
    pub stage1_len: usize,
    pub probe: Vec<LabeledExample>,
    pub curated: Vec<LabeledExample>,
    pub grammar: Grammar,
}

impl TrainingData {
    pub fn generate(spec: &DatasetSpec, cfg: &TrainingConfig) -> Result<Self> {
        if spec.vocab_size != cfg.architecture.vocab_size {
            return Err(Error::Config(format!(
                "dataset vocabulary {} does not match the policy vocabulary {}",
                spec.vocab_size, cfg.architecture.vocab_size
            )));
        }
        let grammar = spec.grammar()?;
        let corpus = generate_corpus(spec)?;
        let probe = build_probe_set(spec, &corpus)?;
        let curated = curated_negatives(
            &grammar,
            &probe,
            cfg.curated_examples.min(probe.len()),
            cfg.curated_per_tier.max(1),
            spec.seed,
        )?;
        let stage1_len = split_corpus(spec, &corpus).0.len();
        Ok(Self {
            corpus,
            stage1_len,
            probe,
            curated,
            grammar,
        })
    }

    pub fn stage1(&self) -> &[LabeledExample] {
        &self.corpus[..self.stage1_len]
    }

    pub fn stage2(&self) -> &[LabeledExample] {
        &self.corpus[self.stage1_len..]
    }
}

/// One row of the per-step log; the preference columns are empty in Stage 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub stage: u8,
    pub loss: f64,
    pub mean_wc: Option<f64>,
    pub mean_a: Option<f64>,
    pub mean_delta_w: Option<f64>,
    pub mean_delta_l: Option<f64>,
    pub wc_easy: Option<f64>,
    pub wc_medium: Option<f64>,
    pub wc_hard: Option<f64>,
    /// Stage 1: batch-mean per-token NLL of the negatives, before the update.
    pub negative_nll: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub stage: u8,
    pub step: usize,
    pub params: PolicyParameters,
}

#[derive(Debug, Clone)]
enum OptimizerState {
    Plain,
    Adam { m: Vec<f64>, v: Vec<f64>, t: i32 },
}

#[derive(Debug, Clone)]
pub struct TrainerState {
    pub params: PolicyParameters,
    /// 1 during and after Stage 1, 2 once the reference exists.
    pub stage: u8,
    /// Updates taken in the current stage.
    pub step: usize,
    pub stage1_complete: bool,
    pub reference: Option<ReferenceSnapshot>,
    reference_fingerprint: Option<String>,
    stage_start: PolicyParameters,
    optimizer: OptimizerState,
    pub steps: Vec<StepLog>,
    pub probes: Vec<ProbeReport>,
    pub checkpoints: Vec<Checkpoint>,
    pub curriculum: Vec<CurriculumRecord>,
    pub stopped_early_at: Option<usize>,
}

impl TrainerState {
    pub fn new(cfg: &TrainingConfig) -> Result<Self> {
        cfg.validate()?;
        let params = PolicyParameters::init_uniform(cfg.architecture, sub_seed(cfg.seed, "init"))?;
        Ok(Self::from_params(params, cfg))
    }

    pub fn from_params(params: PolicyParameters, cfg: &TrainingConfig) -> Self {
        Self {
            stage_start: params.clone(),
            optimizer: fresh_optimizer(cfg, params.len()),
            params,
            stage: 1,
            step: 0,
            stage1_complete: false,
            reference: None,
            reference_fingerprint: None,
            steps: Vec::new(),
            probes: Vec::new(),
            checkpoints: Vec::new(),
            curriculum: Vec::new(),
            stopped_early_at: None,
        }
    }

    fn update(&mut self, gradient: &[f64], lr: f64, cfg: &TrainingConfig) {
        match (&mut self.optimizer, cfg.optimizer) {
            (
                OptimizerState::Adam { m, v, t },
                Optimizer::Adam {
                    beta1,
                    beta2,
                    epsilon,
                },
            ) => {
                *t += 1;
                let (c1, c2) = (1.0 - beta1.powi(*t), 1.0 - beta2.powi(*t));
                let theta = self.params.as_mut_slice();
                for i in 0..gradient.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * gradient[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * gradient[i] * gradient[i];
                    theta[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + epsilon);
                }
            }
            _ => self.params.axpy(-lr, gradient),
        }
    }

    fn checkpoint(&mut self) {
        self.checkpoints.push(Checkpoint {
            stage: self.stage,
            step: self.step,
            params: self.params.clone(),
        });
    }

    fn verify_reference(&self) -> Result<()> {
        if let (Some(r), Some(h)) = (&self.reference, &self.reference_fingerprint) {
            let now = r.fingerprint();
            if &now != h {
                return Err(Error::Protocol(format!("reference changed: {h} -> {now}")));
            }
        }
        Ok(())
    }
}

fn fresh_optimizer(cfg: &TrainingConfig, n: usize) -> OptimizerState {
    match cfg.optimizer {
        Optimizer::GradientDescent => OptimizerState::Plain,
        Optimizer::Adam { .. } => OptimizerState::Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        },
    }
}

fn stage1_batch(
    examples: &[LabeledExample],
    tiers: &[Tier],
    batch_size: usize,
    seed: u64,
) -> Vec<SftExample> {
    use rand::seq::IndexedRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..batch_size)
        .map(|_| {
            let ex = examples.choose(&mut rng).expect("non-empty");
            SftExample {
                context: ex.context.clone(),
                positive: ex.positive.clone(),
                negatives: ex
                    .negatives
                    .iter()
                    .filter(|n| tiers.contains(&n.tier))
                    .map(|n| n.tokens.clone())
                    .collect(),
            }
        })
        .collect()
}

/// Stage-1 negatives of every example, as one batch.
pub fn stage1_negative_set(examples: &[LabeledExample], tiers: &[Tier]) -> Vec<SftExample> {
    examples
        .iter()
        .map(|ex| SftExample {
            context: ex.context.clone(),
            positive: ex.positive.clone(),
            negatives: ex
                .negatives
                .iter()
                .filter(|n| tiers.contains(&n.tier))
                .map(|n| n.tokens.clone())
                .collect(),
        })
        .filter(|ex| !ex.negatives.is_empty())
        .collect()
}

fn divergence<T: Serialize>(stage: u8, step: usize, detail: String, batch: &[T]) -> Error {
    Error::Divergence {
        stage,
        step,
        detail,
        batch: batch
            .iter()
            .map(|b| serde_json::to_string(b).unwrap_or_default())
            .collect(),
    }
}

fn guard<T: Serialize>(
    state: &TrainerState,
    loss: f64,
    gradient: &[f64],
    batch: &[T],
) -> Result<()> {
    let next = state.step + 1;
    if !loss.is_finite() {
        return Err(divergence(
            state.stage,
            next,
            format!("loss is {loss}"),
            batch,
        ));
    }
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(divergence(
            state.stage,
            next,
            format!("gradient coordinate {i} is not finite"),
            batch,
        ));
    }
    Ok(())
}

fn probe(state: &mut TrainerState, data: &TrainingData) -> Result<()> {
    let baseline = match &state.reference {
        Some(r) => r.params().clone(),
        None => state.stage_start.clone(),
    };
    let report = probe_report(
        state.stage,
        state.step,
        &state.params,
        &baseline,
        &data.probe,
    )?;
    state.probes.push(report);
    state.checkpoint();
    Ok(())
}

/// `T1` Stage-1 updates.
pub fn run_stage1(
    mut state: TrainerState,
    data: &TrainingData,
    cfg: &TrainingConfig,
) -> Result<TrainerState> {
    if state.stage != 1 || state.stage1_complete {
        return Err(Error::Protocol(
            "Stage 1 can only run once, before the reference snapshot".into(),
        ));
    }
    cfg.validate()?;
    let examples = data.stage1();
    probe(&mut state, data)?;
    for _ in 0..cfg.t1 {
        let seed = indexed_seed(cfg.seed, "sampling-stage1", state.step as u64);
        let batch = stage1_batch(examples, &cfg.stage1_tiers, cfg.batch_size, seed);
        let (loss, gradient, neg_nll) = match cfg.stage1_mode {
            Stage1Mode::SmoothedSft => {
                let o = sft_c_loss(&state.params, &batch, &cfg.sft)?;
                (o.loss, o.gradient, Some(o.negative_nll))
            }
            Stage1Mode::Sft => {
                let o = sft_loss(&state.params, &batch)?;
                (o.loss, o.gradient, None)
            }
            Stage1Mode::LabelSmoothing => {
                let o = label_smoothing_sft_loss(&state.params, &batch, cfg.label_smoothing)?;
                (o.loss, o.gradient, None)
            }
            Stage1Mode::HardConstraint => {
                let (nll, g_neg) = negative_nll(&state.params, &batch)?;
                if nll < cfg.sft.threshold {
                    // Constraint gradient: d/dθ (C − negative NLL).
                    (
                        cfg.sft.threshold - nll,
                        g_neg.iter().map(|g| -g).collect(),
                        Some(nll),
                    )
                } else {
                    let o = sft_loss(&state.params, &batch)?;
                    (o.loss, o.gradient, Some(nll))
                }
            }
        };
        guard(&state, loss, &gradient, &batch)?;
        state.update(&gradient, cfg.lr, cfg);
        state.step += 1;
        if !state.params.all_finite() {
            return Err(divergence(
                1,
                state.step,
                "parameters became non-finite".into(),
                &batch,
            ));
        }
        state.steps.push(StepLog {
            step: state.step,
            stage: 1,
            loss,
            negative_nll: neg_nll,
            mean_wc: None,
            mean_a: None,
            mean_delta_w: None,
            mean_delta_l: None,
            wc_easy: None,
            wc_medium: None,
            wc_hard: None,
        });
        if state.step.is_multiple_of(cfg.probe_interval) {
            probe(&mut state, data)?;
        }
    }
    if !cfg.t1.is_multiple_of(cfg.probe_interval) {
        probe(&mut state, data)?;
    }
    state.stage1_complete = true;
    Ok(state)
}

/// Freeze the current policy as the reference and move to Stage 2.
pub fn snapshot_reference(mut state: TrainerState, cfg: &TrainingConfig) -> Result<TrainerState> {
    if !state.stage1_complete {
        return Err(Error::Protocol(
            "the reference can only be set after Stage 1 completes".into(),
        ));
    }
    if state.stage == 2 && state.step > 0 {
        return Err(Error::Protocol(
            "the reference cannot be reset after Stage-2 updates".into(),
        ));
    }
    let reference = ReferenceSnapshot::new(&state.params);
    state.reference_fingerprint = Some(reference.fingerprint());
    state.reference = Some(reference);
    state.stage = 2;
    state.step = 0;
    state.stage_start = state.params.clone();
    state.optimizer = fresh_optimizer(cfg, state.params.len());
    Ok(state)
}

fn mean_of(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn stage2_log(
    step: usize,
    loss: f64,
    pairs: &[PreferencePair],
    b: &[LossBreakdown],
    cfg: &TrainingConfig,
) -> StepLog {
    let cooled = cfg.stage2 == Stage2Kind::CwDpo;
    let tier_wc = |t: Tier| {
        if !cooled {
            return None;
        }
        mean_of(
            pairs
                .iter()
                .zip(b)
                .filter(|(p, _)| p.loser_tier.tier == t)
                .map(|(_, x)| x.weight),
        )
    };
    StepLog {
        step,
        stage: 2,
        loss,
        negative_nll: None,
        mean_wc: if cooled {
            mean_of(b.iter().map(|x| x.weight))
        } else {
            None
        },
        mean_a: mean_of(b.iter().map(|x| x.activation)),
        mean_delta_w: mean_of(b.iter().map(|x| x.delta_w)),
        mean_delta_l: mean_of(b.iter().map(|x| x.delta_l)),
        wc_easy: tier_wc(Tier::Easy),
        wc_medium: tier_wc(Tier::Medium),
        wc_hard: tier_wc(Tier::Hard),
    }
}

/// `T2` preference-optimisation updates against the frozen reference.
pub fn run_stage2(
    mut state: TrainerState,
    data: &TrainingData,
    cfg: &TrainingConfig,
) -> Result<TrainerState> {
    let reference = match (&state.reference, state.stage) {
        (Some(r), 2) => r.clone(),
        _ => return Err(Error::Protocol("Stage 2 needs a reference snapshot".into())),
    };
    cfg.validate()?;
    let objective = cfg.objective();
    let examples = data.stage2();
    probe(&mut state, data)?;
    state.curriculum.extend(measure_curriculum(
        &state.params,
        &data.curated,
        &cfg.cooling,
        0,
    )?);
    for _ in 0..cfg.t2 {
        let seed = indexed_seed(cfg.seed, "sampling-stage2", state.step as u64);
        let pairs = build_preference_batch(
            &data.grammar,
            examples,
            &state.params,
            &cfg.mix,
            cfg.batch_size,
            seed,
        )?;
        let out = preference_batch_loss(&state.params, &reference, &pairs, &objective)?;
        guard(&state, out.loss, &out.gradient, &pairs)?;
        state.update(&out.gradient, cfg.stage2_learning_rate(), cfg);
        state.step += 1;
        if !state.params.all_finite() {
            return Err(divergence(
                2,
                state.step,
                "parameters became non-finite".into(),
                &pairs,
            ));
        }
        state.steps.push(stage2_log(
            state.step,
            out.loss,
            &pairs,
            &out.breakdowns,
            cfg,
        ));
        if state.step.is_multiple_of(cfg.trace_interval) {
            state.curriculum.extend(measure_curriculum(
                &state.params,
                &data.curated,
                &cfg.cooling,
                state.step,
            )?);
        }
        if state.step.is_multiple_of(cfg.probe_interval) {
            state.verify_reference()?;
            probe(&mut state, data)?;
            let stage2: Vec<ProbeReport> = state
                .probes
                .iter()
                .filter(|p| p.stage == 2)
                .cloned()
                .collect();
            if cfg.early_stop.enabled && early_stop_check(&stage2, &cfg.early_stop)? {
                state.stopped_early_at = Some(state.step);
                break;
            }
        }
    }
    if !state.step.is_multiple_of(cfg.probe_interval) {
        state.verify_reference()?;
        probe(&mut state, data)?;
    }
    if !state.step.is_multiple_of(cfg.trace_interval) {
        state.curriculum.extend(measure_curriculum(
            &state.params,
            &data.curated,
            &cfg.cooling,
            state.step,
        )?);
    }
    Ok(state)
}

/// Whether training should stop given the probe history so far.
pub fn early_stop_check(history: &[ProbeReport], rule: &EarlyStopRule) -> Result<bool> {
    if history.is_empty() {
        return Err(Error::Input(
            "early stopping needs at least one probe report".into(),
        ));
    }
    let mut best = history[0].delta_logp_positive;
    let mut flat = 0;
    for r in &history[1..] {
        if r.delta_logp_positive > best + rule.threshold {
            best = r.delta_logp_positive;
            flat = 0;
        } else {
            flat += 1;
        }
    }
    Ok(rule.patience > 0 && flat >= rule.patience)
}

/// In-memory result of a full run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub state: TrainerState,
    pub data: TrainingData,
    pub stage1_snapshots: Vec<DistributionSnapshot>,
    pub final_snapshots: Vec<DistributionSnapshot>,
    pub summary: RunSummary,
}

/// Stage 1, reference snapshot, Stage 2, and the end-of-run diagnostics.
pub fn train_two_stage(cfg: &TrainingConfig, spec: &DatasetSpec) -> Result<RunArtifacts> {
    cfg.validate()?;
    spec.validate()?;
    let data = TrainingData::generate(spec, cfg)?;
    let state = TrainerState::new(cfg)?;
    let state = run_stage1(state, &data, cfg)?;
    let state = snapshot_reference(state, cfg)?;
    let stage1_snapshots = top_k_snapshots(
        &state.params,
        &data.probe,
        cfg.snapshot_examples,
        cfg.snapshot_top_k,
    )?;
    let state = run_stage2(state, &data, cfg)?;
    let final_snapshots = top_k_snapshots(
        &state.params,
        &data.probe,
        cfg.snapshot_examples,
        cfg.snapshot_top_k,
    )?;
    let summary = RunSummary::build(cfg, spec, &state, &data)?;
    Ok(RunArtifacts {
        state,
        data,
        stage1_snapshots,
        final_snapshots,
        summary,
    })
}

/// Final per-token NLL of the Stage-1 negatives, averaged over all of them.
pub fn stage1_negative_nll(
    params: &PolicyParameters,
    data: &TrainingData,
    cfg: &TrainingConfig,
) -> Result<f64> {
    let set = stage1_negative_set(data.stage1(), &cfg.stage1_tiers);
    Ok(negative_nll(params, &set)?.0)
}
