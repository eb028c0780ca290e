//! One-step learning dynamics through the empirical NTK.
//!
//! Sign conventions, used throughout:
//!
//! * `A = ∇_z ℓ̄(y)` on the observed sample, so each position holds
//!   `(1/L)(one_hot(y_l) − softmax(z_l))`.
//! * `K = J_o J_uᵀ` with `J = ∂z/∂θ`, rows indexed by observed logits and
//!   columns by the logits of every sequence in the updating sample.
//! * `G = ∇_z L` on the updating sample, so a plain gradient step is
//!   `Δθ = −η J_uᵀ G` and to first order `Δℓ̄ = −η⟨A, K G⟩`.
//!
//! The kernel-norm proxy is `‖A_o‖·‖K_uo‖_F·‖G_u‖`, a Cauchy-Schwarz style
//! bound on `|⟨A, K G⟩|`. Its three factors are reported separately.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::{LabeledExample, NegativeTier, PreferencePair, Provenance, Tier};
use crate::diagnostics::csv_error;
use crate::error::{Error, Result};
use crate::numeric::{dot, norm_sq, sigmoid};
use crate::objectives::{
    cooling_weight, cw_dpo_loss, dpo_loss, preference_loss, CoolingConfig, DpoConfig,
    PreferenceObjective,
};
use crate::policy::{Forward, PolicyParameters, ReferenceSnapshot, TokenSequence};

/// Smoothing window for trend checks on component-norm series.
pub const TREND_WINDOW: usize = 5;

/// Tolerance for the kernel symmetry and PSD checks.
pub const GRAM_SYMMETRY_TOL: f64 = 1e-9;
pub const GRAM_EIGEN_TOL: f64 = 1e-8;

/// How the kernel enters a computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelMode {
    /// Materialise the logit Jacobians; subject to the dense parameter cap.
    Dense,
    /// Vector-Jacobian products only; no size limit.
    MatrixFree,
}

/// One teacher-forced response: the logits it produces are one block of `z`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogitSample {
    pub context: TokenSequence,
    pub response: TokenSequence,
}

impl LogitSample {
    pub fn new(context: TokenSequence, response: TokenSequence) -> Self {
        Self { context, response }
    }

    fn forward(&self, params: &PolicyParameters) -> Result<Forward> {
        params.forward(&self.context, &self.response)
    }
}

/// Loss applied to the updating pair.
#[derive(Debug, Clone)]
pub enum InfluenceLoss {
    /// Sequence NLL of the pair's winner; the loser is ignored.
    Sft,
    /// A preference objective against a frozen reference.
    Preference {
        objective: PreferenceObjective,
        reference: ReferenceSnapshot,
    },
}

impl InfluenceLoss {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Sft => "sft",
            Self::Preference {
                objective: PreferenceObjective::Dpo { .. },
                ..
            } => "dpo",
            Self::Preference {
                objective: PreferenceObjective::CwDpo { .. },
                ..
            } => "cw-dpo",
            Self::Preference {
                objective: PreferenceObjective::FocalDpo { .. },
                ..
            } => "focal-dpo",
        }
    }
}

/// The pieces of `Δℓ̄ ≈ −η⟨A, K G⟩` for one `(χ_u, χ_o)` pair.
#[derive(Debug, Clone)]
pub struct InfluenceBreakdown {
    /// `A`, flattened `L_o × |V|`.
    pub belief_geometry: Vec<f64>,
    /// `K`; `None` when the policy is over the dense cap.
    pub kernel: Option<DMatrix<f64>>,
    /// `G`, flattened over every sequence of the updating sample in order.
    pub residual: Vec<f64>,
    /// `⟨A, K G⟩`.
    pub contraction: f64,
    pub predicted: f64,
    /// Measured after one real gradient step on a scratch copy.
    pub actual: f64,
    pub eta: f64,
}

impl InfluenceBreakdown {
    pub fn absolute_error(&self) -> f64 {
        (self.actual - self.predicted).abs()
    }

    /// `|actual − predicted| / (|actual| + 1e-12)`.
    pub fn relative_error(&self) -> f64 {
        self.absolute_error() / (self.actual.abs() + 1e-12)
    }
}

/// `∇_z ℓ̄(y | x)`: `(1/L)(one_hot − softmax)` at each position.
///
/// `Dense` mode refuses policies over the dense-Jacobian cap so that callers
/// who go on to build `K` fail early.
pub fn belief_geometry(
    params: &PolicyParameters,
    sample: &LogitSample,
    mode: KernelMode,
) -> Result<Vec<f64>> {
    if mode == KernelMode::Dense {
        params.ensure_dense_capable()?;
    }
    Ok(belief_of(&sample.forward(params)?))
}

fn belief_of(fwd: &Forward) -> Vec<f64> {
    let inv = 1.0 / fwd.len() as f64;
    fwd.grad_sequence_log_prob()
        .into_iter()
        .map(|g| g * inv)
        .collect()
}

fn stacked_jacobian(params: &PolicyParameters, fwds: &[Forward]) -> Result<DMatrix<f64>> {
    let blocks = fwds
        .iter()
        .map(|f| params.jacobian_of(f))
        .collect::<Result<Vec<_>>>()?;
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, params.len());
    let mut r = 0;
    for b in blocks {
        out.rows_mut(r, b.nrows()).copy_from(&b);
        r += b.nrows();
    }
    Ok(out)
}

/// `J_o J_uᵀ` from explicit Jacobians.
pub fn entk_from_jacobians(observed: &DMatrix<f64>, update: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if observed.ncols() != update.ncols() {
        return Err(Error::Input(format!(
            "Jacobians disagree on the parameter count: {} vs {}",
            observed.ncols(),
            update.ncols()
        )));
    }
    Ok(observed * update.transpose())
}

/// Dense `K = J_o J_uᵀ`; the columns follow `update` in order.
pub fn entk_block(
    params: &PolicyParameters,
    observed: &LogitSample,
    update: &[LogitSample],
) -> Result<DMatrix<f64>> {
    params.ensure_dense_capable()?;
    if update.is_empty() {
        return Err(Error::Input("the updating sample has no sequences".into()));
    }
    let jo = params.jacobian_of(&observed.forward(params)?)?;
    let fwds = update
        .iter()
        .map(|s| s.forward(params))
        .collect::<Result<Vec<_>>>()?;
    entk_from_jacobians(&jo, &stacked_jacobian(params, &fwds)?)
}

fn check_lengths(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Input(format!(
            "{what} has {got} entries, expected {want}"
        )));
    }
    Ok(())
}

/// `⟨A, K G⟩` as `⟨J_oᵀA, J_uᵀG⟩`, without forming `K`.
pub fn entk_contraction(
    params: &PolicyParameters,
    observed: &LogitSample,
    a: &[f64],
    update: &[LogitSample],
    g: &[f64],
) -> Result<f64> {
    let fo = observed.forward(params)?;
    check_lengths("A", a.len(), fo.logits().len())?;
    let left = params.vjp(&fo, a);
    let fwds = update
        .iter()
        .map(|s| s.forward(params))
        .collect::<Result<Vec<_>>>()?;
    check_lengths("G", g.len(), fwds.iter().map(|f| f.logits().len()).sum())?;
    let mut right = vec![0.0; params.len()];
    let mut off = 0;
    for f in &fwds {
        let n = f.logits().len();
        params.accumulate_vjp(f, &g[off..off + n], &mut right);
        off += n;
    }
    Ok(dot(&left, &right))
}

/// `⟨A, K G⟩` with an explicit kernel.
pub fn dense_contraction(kernel: &DMatrix<f64>, a: &[f64], g: &[f64]) -> Result<f64> {
    check_lengths("A", a.len(), kernel.nrows())?;
    check_lengths("G", g.len(), kernel.ncols())?;
    let kg = kernel * DVector::from_column_slice(g);
    Ok(dot(a, kg.as_slice()))
}

/// Symmetry and spectrum of a self-kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GramCheck {
    /// Largest `|K_ij − K_ji|`.
    pub asymmetry: f64,
    /// Smallest eigenvalue of `(K + Kᵀ)/2`.
    pub min_eigenvalue: f64,
}

impl GramCheck {
    pub fn passes(&self) -> bool {
        self.asymmetry <= GRAM_SYMMETRY_TOL && self.min_eigenvalue >= -GRAM_EIGEN_TOL
    }
}

pub fn gram_check(kernel: &DMatrix<f64>) -> Result<GramCheck> {
    if !kernel.is_square() {
        return Err(Error::Input(format!(
            "kernel is {}x{}, not square",
            kernel.nrows(),
            kernel.ncols()
        )));
    }
    let asymmetry = (kernel - kernel.transpose()).amax();
    let sym = (kernel + kernel.transpose()) * 0.5;
    let min_eigenvalue = SymmetricEigen::new(sym).eigenvalues.min();
    Ok(GramCheck {
        asymmetry,
        min_eigenvalue,
    })
}

/// Loss gradient in parameter space and in logit space for one update pair.
struct Residual {
    sequences: Vec<LogitSample>,
    logits: Vec<f64>,
    gradient: Vec<f64>,
}

fn residual(
    params: &PolicyParameters,
    pair: &PreferencePair,
    loss: &InfluenceLoss,
) -> Result<Residual> {
    let winner = LogitSample::new(pair.context.clone(), pair.winner.clone());
    match loss {
        InfluenceLoss::Sft => {
            let fwd = winner.forward(params)?;
            let logits: Vec<f64> = fwd
                .grad_sequence_log_prob()
                .into_iter()
                .map(|g| -g)
                .collect();
            let gradient = params.vjp(&fwd, &logits);
            Ok(Residual {
                sequences: vec![winner],
                logits,
                gradient,
            })
        }
        InfluenceLoss::Preference {
            objective,
            reference,
        } => {
            let out = preference_loss(params, reference, pair, objective)?;
            let loser = LogitSample::new(pair.context.clone(), pair.loser.clone());
            Ok(Residual {
                sequences: vec![winner, loser],
                logits: out.residual.total(),
                gradient: out.gradient,
            })
        }
    }
}

/// Predicted and measured one-step change of `ℓ̄(χ_o)` under a plain
/// gradient step of size `η` on `χ_u`.
pub fn predict_influence(
    params: &PolicyParameters,
    update: &PreferencePair,
    observed: &LogitSample,
    loss: &InfluenceLoss,
    eta: f64,
) -> Result<InfluenceBreakdown> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Config(format!(
            "learning rate must be finite and > 0, got {eta}"
        )));
    }
    let fo = observed.forward(params)?;
    let a = belief_of(&fo);
    let res = residual(params, update, loss)?;
    let (kernel, contraction) = if params.ensure_dense_capable().is_ok() {
        let k = entk_block(params, observed, &res.sequences)?;
        let c = dense_contraction(&k, &a, &res.logits)?;
        (Some(k), c)
    } else {
        (
            None,
            entk_contraction(params, observed, &a, &res.sequences, &res.logits)?,
        )
    };
    let mut scratch = params.clone();
    scratch.axpy(-eta, &res.gradient);
    let after = observed.forward(&scratch)?.avg_token_log_prob();
    Ok(InfluenceBreakdown {
        belief_geometry: a,
        kernel,
        residual: res.logits,
        contraction,
        predicted: -eta * contraction,
        actual: after - fo.avg_token_log_prob(),
        eta,
    })
}

/// `|actual − predicted|` at `η` divided by the same at `η/2`; about 4 when
/// the remainder is quadratic in the step.
pub fn step_halving_ratio(
    params: &PolicyParameters,
    update: &PreferencePair,
    observed: &LogitSample,
    loss: &InfluenceLoss,
    eta: f64,
) -> Result<f64> {
    let full = predict_influence(params, update, observed, loss, eta)?;
    let half = predict_influence(params, update, observed, loss, eta / 2.0)?;
    Ok(full.absolute_error() / half.absolute_error())
}

/// A fixed `(χ_u, χ_o)` pair followed across checkpoints.
#[derive(Debug, Clone)]
pub struct ProbePair {
    pub id: usize,
    pub update: PreferencePair,
    pub observed: LogitSample,
}

/// Up to `count` probe pairs: each example's positive against its first
/// dataset negative of `tier` updates, and the next example's positive is
/// observed.
pub fn probe_pairs(
    examples: &[LabeledExample],
    tier: Tier,
    count: usize,
) -> Result<Vec<ProbePair>> {
    if examples.len() < 2 {
        return Err(Error::Input("probe pairs need at least 2 examples".into()));
    }
    let mut out = Vec::with_capacity(count);
    for (i, ex) in examples.iter().enumerate() {
        if out.len() == count {
            break;
        }
        let Some(neg) = ex.negatives_of(tier).next() else {
            continue;
        };
        let next = &examples[(i + 1) % examples.len()];
        out.push(ProbePair {
            id: out.len(),
            update: PreferencePair::new(
                ex.id,
                ex.context.clone(),
                ex.positive.clone(),
                neg.tokens.clone(),
                NegativeTier {
                    tier,
                    provenance: Provenance::Dataset,
                },
            )?,
            observed: LogitSample::new(next.context.clone(), next.positive.clone()),
        });
    }
    if out.is_empty() {
        return Err(Error::Input(format!(
            "no example carries a {} negative",
            tier.name()
        )));
    }
    Ok(out)
}

/// Component norms of one pair at one checkpoint.
///
/// `delta_log_prob_sq` is the change since the previous checkpoint; every
/// other column is measured at `step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentNorms {
    pub step: usize,
    pub pair_id: usize,
    /// `‖Δlog π‖²` over the observed response's token log-probabilities.
    pub delta_log_prob_sq: f64,
    /// `‖A_o‖²`.
    pub belief_norm_sq: f64,
    /// `‖G‖²` on the updating pair.
    pub residual_norm_sq: f64,
    /// `‖A_o‖·‖K_uo‖_F·‖G_u‖`.
    pub kernel_bound: f64,
    pub predicted_delta: f64,
    pub actual_delta: f64,
}

impl ComponentNorms {
    fn all_non_negative(&self) -> bool {
        [
            self.delta_log_prob_sq,
            self.belief_norm_sq,
            self.residual_norm_sq,
            self.kernel_bound,
        ]
        .iter()
        .all(|x| x.is_finite() && *x >= 0.0)
    }
}

/// Norms for every pair at every checkpoint after the first.
///
/// `checkpoints` are `(step, parameters)` in training order; `eta` sets the
/// step used for the predicted and actual one-step `Δℓ̄` columns.
pub fn track_component_norms(
    checkpoints: &[(usize, PolicyParameters)],
    pairs: &[ProbePair],
    loss: &InfluenceLoss,
    eta: f64,
) -> Result<Vec<ComponentNorms>> {
    if checkpoints.len() < 2 {
        return Err(Error::Input(format!(
            "need at least 2 checkpoints, got {}",
            checkpoints.len()
        )));
    }
    if pairs.is_empty() {
        return Err(Error::Input("no probe pairs".into()));
    }
    let mut rows = Vec::with_capacity((checkpoints.len() - 1) * pairs.len());
    for w in checkpoints.windows(2) {
        let ((_, before), (step, params)) = (&w[0], &w[1]);
        for pair in pairs {
            let now = pair.observed.forward(params)?.token_log_probs();
            let prev = pair.observed.forward(before)?.token_log_probs();
            let delta: f64 = now.iter().zip(&prev).map(|(a, b)| (a - b).powi(2)).sum();
            let inf = predict_influence(params, &pair.update, &pair.observed, loss, eta)?;
            let kernel = inf.kernel.as_ref().ok_or_else(|| {
                Error::Capability("the kernel-norm proxy needs the dense kernel".into())
            })?;
            let a2 = norm_sq(&inf.belief_geometry);
            let g2 = norm_sq(&inf.residual);
            let row = ComponentNorms {
                step: *step,
                pair_id: pair.id,
                delta_log_prob_sq: delta,
                belief_norm_sq: a2,
                residual_norm_sq: g2,
                kernel_bound: a2.sqrt() * kernel.norm() * g2.sqrt(),
                predicted_delta: inf.predicted,
                actual_delta: inf.actual,
            };
            if !row.all_non_negative() {
                return Err(Error::Input(format!(
                    "component norms for pair {} at step {step} are not finite ({})",
                    pair.id,
                    loss.name()
                )));
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

pub const COMPONENT_NORMS_HEADER: &str =
    "step,pair_id,delta_log_prob_sq,belief_norm_sq,residual_norm_sq,kernel_bound,predicted_delta,actual_delta";

pub fn write_component_norms_csv(path: &Path, rows: &[ComponentNorms]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Trailing moving average; the first `window − 1` points average what exists.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..xs.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            xs[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// Least-squares slope of `ys` against its index.
pub fn trend_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (num, den) = ys
        .iter()
        .enumerate()
        .fold((0.0, 0.0), |(num, den), (i, y)| {
            let dx = i as f64 - mx;
            (num + dx * (y - my), den + dx * dx)
        });
    num / den
}

/// One `(pair, ℓ̄)` row of the regularisation profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizationRow {
    pub pair_index: usize,
    pub avg_log_prob: f64,
    pub cooling_weight: f64,
    /// `a = σ(β(Δ_w − Δ_l))`.
    pub activation: f64,
    /// `a′ = σ(β(Δ_w − w_c·Δ_l))`.
    pub cooled_activation: f64,
    /// `β(1−a)`.
    pub vanilla_factor: f64,
    /// `w_c·β(1−a′)`.
    pub cooled_factor: f64,
    /// `cooled_factor / vanilla_factor`.
    pub ratio: f64,
    pub vanilla_loser_grad_norm: f64,
    pub cooled_loser_grad_norm: f64,
    /// `|cooled norm − ratio·vanilla norm| / max(vanilla norm, 1e-300)`.
    pub norm_ratio_error: f64,
}

/// `points` evenly spaced loser confidences over `[floor − 5τ, floor + 5τ]`.
pub fn confidence_grid(cooling: &CoolingConfig, points: usize) -> Result<Vec<f64>> {
    cooling.validate()?;
    if points < 2 {
        return Err(Error::Config(format!(
            "the confidence grid needs at least 2 points, got {points}"
        )));
    }
    let lo = cooling.floor - 5.0 * cooling.temperature;
    let step = 10.0 * cooling.temperature / (points - 1) as f64;
    Ok((0..points).map(|i| lo + step * i as f64).collect())
}

/// Vanilla against cooled loser factors over a grid of loser confidences.
///
/// The grid value stands in for the loser's `ℓ̄` when forming `w_c`; the
/// margins and the loser's logit residual come from the actual pair. The
/// cooled loser gradient is computed through a separate CW-DPO evaluation
/// with `w_c` pinned, so the norm check compares two independent paths.
pub fn regularization_profile(
    params: &PolicyParameters,
    reference: &ReferenceSnapshot,
    pairs: &[PreferencePair],
    beta: f64,
    cooling: &CoolingConfig,
    points: usize,
) -> Result<Vec<RegularizationRow>> {
    let grid = confidence_grid(cooling, points)?;
    let dpo = DpoConfig { beta };
    dpo.validate()?;
    let free = CoolingConfig {
        fixed_weight: None,
        through_weight: false,
        hard_filter: false,
        ..*cooling
    };
    let mut rows = Vec::with_capacity(grid.len() * pairs.len());
    for (pair_index, pair) in pairs.iter().enumerate() {
        let vanilla = dpo_loss(params, reference, pair, &dpo)?.breakdown;
        let a = vanilla.activation;
        for &lbar in &grid {
            let w = cooling_weight(lbar, &free);
            let pinned = CoolingConfig {
                fixed_weight: Some(w),
                ..free
            };
            let cooled = cw_dpo_loss(params, reference, pair, &dpo, &pinned)?.breakdown;
            let a_cooled = sigmoid(beta * (vanilla.delta_w - w * vanilla.delta_l));
            let vanilla_factor = beta * (1.0 - a);
            let cooled_factor = w * beta * (1.0 - a_cooled);
            let ratio = cooled_factor / vanilla_factor;
            let expected = ratio * vanilla.loser_grad_norm;
            rows.push(RegularizationRow {
                pair_index,
                avg_log_prob: lbar,
                cooling_weight: w,
                activation: a,
                cooled_activation: a_cooled,
                vanilla_factor,
                cooled_factor,
                ratio,
                vanilla_loser_grad_norm: vanilla.loser_grad_norm,
                cooled_loser_grad_norm: cooled.loser_grad_norm,
                norm_ratio_error: (cooled.loser_grad_norm - expected).abs()
                    / vanilla.loser_grad_norm.max(1e-300),
            });
        }
    }
    Ok(rows)
}
