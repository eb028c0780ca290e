//! DPO, cooling-weighted DPO and the focal (global reweighting) baseline.
//!
//! All three share one core: a margin `m = β(Δ_w − w·Δ_l)` whose loser
//! weight `w` is 1 for DPO and focal, and the cooling weight for CW-DPO.
//! The logit residual of the loss is `c·(G^w ⊕ −w·G^l)` with
//! `G = softmax − one_hot` on each sequence and `c = −β·dL/dm`.

use serde::{Deserialize, Serialize};

use super::{cooling_weight, CoolingConfig, DpoConfig};
use crate::data::PreferencePair;
use crate::error::{Error, Result};
use crate::numeric::{log_sigmoid, norm_sq, sigmoid};
use crate::policy::{Forward, PolicyParameters, ReferenceSnapshot};

/// Scalars of one pair's loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub loss: f64,
    pub delta_w: f64,
    pub delta_l: f64,
    /// `σ(m)`: `a` for DPO and focal, `a′` for CW-DPO.
    pub activation: f64,
    /// Loser weight inside the margin (1 unless cooled).
    pub weight: f64,
    pub beta: f64,
    /// `ℓ̄` of the loser under the current policy.
    pub loser_avg_log_prob: f64,
    pub winner_grad_norm: f64,
    pub loser_grad_norm: f64,
    /// Pair dropped by the hard filter (zero gradient).
    pub filtered: bool,
}

impl LossBreakdown {
    pub fn margin(&self) -> f64 {
        self.beta * (self.delta_w - self.weight * self.delta_l)
    }
}

/// Per-logit loss gradient on the updating pair, split by sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResidualDecomposition {
    /// `c = −β·dL/dm`; `β(1−a)` for DPO, `β(1−a′)` for CW-DPO.
    pub coefficient: f64,
    pub weight: f64,
    /// `G^w = softmax − one_hot` over the winner's positions (flattened `L_w×|V|`).
    pub winner: Vec<f64>,
    /// `G^l` over the loser's positions.
    pub loser: Vec<f64>,
    /// Gradient of the loss with respect to the winner logits.
    pub total_winner: Vec<f64>,
    /// Gradient of the loss with respect to the loser logits.
    pub total_loser: Vec<f64>,
}

impl LossResidualDecomposition {
    /// `w·G^l`.
    pub fn cooled_loser(&self) -> Vec<f64> {
        self.loser.iter().map(|g| self.weight * g).collect()
    }

    /// `[total_winner; total_loser]`.
    pub fn total(&self) -> Vec<f64> {
        let mut t = self.total_winner.clone();
        t.extend_from_slice(&self.total_loser);
        t
    }
}

#[derive(Debug, Clone)]
pub struct PairOutput {
    pub breakdown: LossBreakdown,
    pub gradient: Vec<f64>,
    pub residual: LossResidualDecomposition,
    pub winner_forward: Forward,
    pub loser_forward: Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PreferenceObjective {
    Dpo {
        dpo: DpoConfig,
    },
    CwDpo {
        dpo: DpoConfig,
        cooling: CoolingConfig,
    },
    FocalDpo {
        dpo: DpoConfig,
        gamma: f64,
    },
}

impl PreferenceObjective {
    pub fn beta(&self) -> f64 {
        match self {
            Self::Dpo { dpo } | Self::CwDpo { dpo, .. } | Self::FocalDpo { dpo, .. } => dpo.beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Dpo { dpo } => dpo.validate(),
            Self::CwDpo { dpo, cooling } => {
                dpo.validate()?;
                cooling.validate()
            }
            Self::FocalDpo { dpo, gamma } => {
                dpo.validate()?;
                if !(*gamma >= 0.0 && gamma.is_finite()) {
                    return Err(Error::Config(format!(
                        "focal gamma must be finite and >= 0, got {gamma}"
                    )));
                }
                Ok(())
            }
        }
    }
}

fn residual(fwd: &Forward) -> Vec<f64> {
    let mut g = fwd.grad_sequence_log_prob();
    g.iter_mut().for_each(|x| *x = -*x);
    g
}

struct Margin {
    winner: Forward,
    loser: Forward,
    delta_w: f64,
    delta_l: f64,
}

fn margin_terms(
    params: &PolicyParameters,
    reference: &ReferenceSnapshot,
    pair: &PreferencePair,
) -> Result<Margin> {
    if pair.winner == pair.loser {
        return Err(Error::Input(format!(
            "pair {}: winner equals loser",
            pair.example_id
        )));
    }
    let winner = params.forward(&pair.context, &pair.winner)?;
    let loser = params.forward(&pair.context, &pair.loser)?;
    let r = reference.params();
    let ref_w = r.forward(&pair.context, &pair.winner)?.sequence_log_prob();
    let ref_l = r.forward(&pair.context, &pair.loser)?.sequence_log_prob();
    Ok(Margin {
        delta_w: winner.sequence_log_prob() - ref_w,
        delta_l: loser.sequence_log_prob() - ref_l,
        winner,
        loser,
    })
}

/// Pull the residual back to parameters and fill in the bookkeeping.
#[allow(clippy::too_many_arguments)]
fn assemble(
    params: &PolicyParameters,
    m: Margin,
    beta: f64,
    weight: f64,
    loss: f64,
    activation: f64,
    coefficient: f64,
    extra_loser: Option<Vec<f64>>,
    filtered: bool,
) -> PairOutput {
    let g_w = residual(&m.winner);
    let g_l = residual(&m.loser);
    let total_winner: Vec<f64> = g_w.iter().map(|g| coefficient * g).collect();
    let loser_scale = -coefficient * weight;
    let mut total_loser: Vec<f64> = g_l.iter().map(|g| loser_scale * g).collect();
    if let Some(extra) = extra_loser {
        total_loser.iter_mut().zip(extra).for_each(|(t, e)| *t += e);
    }
    let grad_w = params.vjp(&m.winner, &total_winner);
    let grad_l = params.vjp(&m.loser, &total_loser);
    let gradient: Vec<f64> = grad_w.iter().zip(&grad_l).map(|(a, b)| a + b).collect();
    let breakdown = LossBreakdown {
        loss,
        delta_w: m.delta_w,
        delta_l: m.delta_l,
        activation,
        weight,
        beta,
        loser_avg_log_prob: m.loser.avg_token_log_prob(),
        winner_grad_norm: norm_sq(&grad_w).sqrt(),
        loser_grad_norm: norm_sq(&grad_l).sqrt(),
        filtered,
    };
    PairOutput {
        breakdown,
        gradient,
        residual: LossResidualDecomposition {
            coefficient,
            weight,
            winner: g_w,
            loser: g_l,
            total_winner,
            total_loser,
        },
        winner_forward: m.winner,
        loser_forward: m.loser,
    }
}

/// `−ln σ(β(Δ_w − Δ_l))`.
pub fn dpo_loss(
    params: &PolicyParameters,
    reference: &ReferenceSnapshot,
    pair: &PreferencePair,
    cfg: &DpoConfig,
) -> Result<PairOutput> {
    cfg.validate()?;
    let m = margin_terms(params, reference, pair)?;
    Ok(weighted_margin(params, m, cfg.beta, 1.0))
}

fn weighted_margin(params: &PolicyParameters, m: Margin, beta: f64, weight: f64) -> PairOutput {
    let z = beta * (m.delta_w - weight * m.delta_l);
    let a = sigmoid(z);
    assemble(
        params,
        m,
        beta,
        weight,
        -log_sigmoid(z),
        a,
        beta * (1.0 - a),
        None,
        false,
    )
}

/// `−ln σ(β(Δ_w − w_c·Δ_l))` with `w_c` from the loser's current `ℓ̄`.
///
/// `w_c` is held constant in the gradient unless `through_weight` is set.
/// With `hard_filter`, a loser below the floor yields a zero gradient.
pub fn cw_dpo_loss(
    params: &PolicyParameters,
    reference: &ReferenceSnapshot,
    pair: &PreferencePair,
    dpo: &DpoConfig,
    cooling: &CoolingConfig,
) -> Result<PairOutput> {
    dpo.validate()?;
    cooling.validate()?;
    let m = margin_terms(params, reference, pair)?;
    let lbar = m.loser.avg_token_log_prob();
    let w = cooling_weight(lbar, cooling);
    if cooling.hard_filter && lbar < cooling.floor {
        let z = dpo.beta * (m.delta_w - w * m.delta_l);
        return Ok(assemble(
            params,
            m,
            dpo.beta,
            w,
            -log_sigmoid(z),
            sigmoid(z),
            0.0,
            None,
            true,
        ));
    }
    if cooling.through_weight && cooling.fixed_weight.is_none() {
        // dL/dw = β(1−a′)Δ_l and dw/dℓ̄ = w(1−w)/τ; ∇_z ℓ̄ = (1/L)(one_hot − softmax).
        let z = dpo.beta * (m.delta_w - w * m.delta_l);
        let a = sigmoid(z);
        let scale = dpo.beta * (1.0 - a) * m.delta_l * w * (1.0 - w)
            / cooling.temperature
            / m.loser.len() as f64;
        let extra: Vec<f64> = m
            .loser
            .grad_sequence_log_prob()
            .iter()
            .map(|g| scale * g)
            .collect();
        return Ok(assemble(
            params,
            m,
            dpo.beta,
            w,
            -log_sigmoid(z),
            a,
            dpo.beta * (1.0 - a),
            Some(extra),
            false,
        ));
    }
    Ok(weighted_margin(params, m, dpo.beta, w))
}

/// `(1−a)^γ · (−ln a)` with `a = σ(β(Δ_w − Δ_l))`.
pub fn focal_dpo_loss(
    params: &PolicyParameters,
    reference: &ReferenceSnapshot,
    pair: &PreferencePair,
    dpo: &DpoConfig,
    gamma: f64,
) -> Result<PairOutput> {
    PreferenceObjective::FocalDpo { dpo: *dpo, gamma }.validate()?;
    let m = margin_terms(params, reference, pair)?;
    let z = dpo.beta * (m.delta_w - m.delta_l);
    let a = sigmoid(z);
    let u = 1.0 - a;
    let nll = -log_sigmoid(z);
    let modulator = u.powf(gamma);
    // dL/dm = −γ·a·(1−a)^γ·(−ln a) − (1−a)^{γ+1}
    let dl_dm = -gamma * a * modulator * nll - u * modulator;
    Ok(assemble(
        params,
        m,
        dpo.beta,
        1.0,
        modulator * nll,
        a,
        -dpo.beta * dl_dm,
        None,
        false,
    ))
}

pub fn preference_loss(
    params: &PolicyParameters,
    reference: &ReferenceSnapshot,
    pair: &PreferencePair,
    objective: &PreferenceObjective,
) -> Result<PairOutput> {
    match objective {
        PreferenceObjective::Dpo { dpo } => dpo_loss(params, reference, pair, dpo),
        PreferenceObjective::CwDpo { dpo, cooling } => {
            cw_dpo_loss(params, reference, pair, dpo, cooling)
        }
        PreferenceObjective::FocalDpo { dpo, gamma } => {
            focal_dpo_loss(params, reference, pair, dpo, *gamma)
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreferenceBatchOutput {
    pub loss: f64,
    pub gradient: Vec<f64>,
    pub breakdowns: Vec<LossBreakdown>,
}

/// Mean loss and gradient over a batch of pairs.
pub fn preference_batch_loss(
    params: &PolicyParameters,
    reference: &ReferenceSnapshot,
    pairs: &[PreferencePair],
    objective: &PreferenceObjective,
) -> Result<PreferenceBatchOutput> {
    if pairs.is_empty() {
        return Err(Error::Input("batch must be non-empty".into()));
    }
    let n = pairs.len() as f64;
    let mut gradient = vec![0.0; params.len()];
    let mut loss = 0.0;
    let mut breakdowns = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let out = preference_loss(params, reference, pair, objective)?;
        loss += out.breakdown.loss;
        gradient
            .iter_mut()
            .zip(&out.gradient)
            .for_each(|(g, x)| *g += x / n);
        breakdowns.push(out.breakdown);
    }
    Ok(PreferenceBatchOutput {
        loss: loss / n,
        gradient,
        breakdowns,
    })
}
