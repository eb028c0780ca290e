//! Supervised objectives: plain NLL, NLL with a negative-likelihood penalty,
//! and label-smoothed cross-entropy.

use serde::{Deserialize, Serialize};

use super::SftConfig;
use crate::error::{Error, Result};
use crate::policy::{Forward, PolicyParameters, TokenSequence};

/// A supervised example; `negatives` is only read by [`sft_c_loss`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub context: TokenSequence,
    pub positive: TokenSequence,
    pub negatives: Vec<TokenSequence>,
}

impl SftExample {
    pub fn new(context: TokenSequence, positive: TokenSequence) -> Self {
        Self {
            context,
            positive,
            negatives: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SftOutput {
    pub loss: f64,
    pub gradient: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SftCOutput {
    pub loss: f64,
    pub gradient: Vec<f64>,
    pub penalty_active: bool,
    /// Batch mean of the positives' sequence NLL.
    pub positive_nll: f64,
    /// Batch mean of the negatives' per-token NLL.
    pub negative_nll: f64,
    pub penalty: f64,
}

fn non_empty<T>(batch: &[T]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Input("batch must be non-empty".into()));
    }
    Ok(())
}

/// Accumulate `scale · ∇_θ(−log π(y|x))` into `grad` and return `−log π(y|x)`.
fn accumulate_nll(params: &PolicyParameters, fwd: &Forward, scale: f64, grad: &mut [f64]) -> f64 {
    let mut g = fwd.grad_sequence_log_prob();
    g.iter_mut().for_each(|x| *x *= -scale);
    params.accumulate_vjp(fwd, &g, grad);
    -fwd.sequence_log_prob()
}

/// Mean per-sequence NLL of the positives.
pub fn sft_loss(params: &PolicyParameters, batch: &[SftExample]) -> Result<SftOutput> {
    non_empty(batch)?;
    let n = batch.len() as f64;
    let mut gradient = vec![0.0; params.len()];
    let mut loss = 0.0;
    for ex in batch {
        let fwd = params.forward(&ex.context, &ex.positive)?;
        loss += accumulate_nll(params, &fwd, 1.0 / n, &mut gradient);
    }
    Ok(SftOutput {
        loss: loss / n,
        gradient,
    })
}

/// Positive NLL plus `λ·ReLU(C − mean per-token NLL of the negatives)`.
///
/// The negative mean runs over every negative in the batch. With
/// `per_sample` the ReLU is applied to each negative and the results averaged.
pub fn sft_c_loss(
    params: &PolicyParameters,
    batch: &[SftExample],
    cfg: &SftConfig,
) -> Result<SftCOutput> {
    non_empty(batch)?;
    cfg.validate()?;
    if let Some(i) = batch.iter().position(|ex| ex.negatives.is_empty()) {
        return Err(Error::Input(format!(
            "batch example {i} carries no negatives"
        )));
    }
    let SftOutput {
        loss: positive_nll,
        mut gradient,
    } = sft_loss(params, batch)?;
    let fwds = batch
        .iter()
        .flat_map(|ex| {
            ex.negatives
                .iter()
                .map(move |y| params.forward(&ex.context, y))
        })
        .collect::<Result<Vec<_>>>()?;
    let m = fwds.len() as f64;
    let per_token: Vec<f64> = fwds.iter().map(|f| -f.avg_token_log_prob()).collect();
    let negative_nll = per_token.iter().sum::<f64>() / m;
    // Which negatives receive gradient, and the resulting penalty.
    let (penalty, active): (f64, Vec<bool>) = if cfg.per_sample {
        let act: Vec<bool> = per_token.iter().map(|&x| cfg.threshold - x > 0.0).collect();
        let pen = per_token
            .iter()
            .map(|&x| (cfg.threshold - x).max(0.0))
            .sum::<f64>()
            / m;
        (cfg.lambda * pen, act)
    } else {
        let on = cfg.threshold - negative_nll > 0.0;
        (
            cfg.lambda * (cfg.threshold - negative_nll).max(0.0),
            vec![on; fwds.len()],
        )
    };
    let penalty_active = penalty > 0.0;
    if cfg.lambda > 0.0 {
        for (fwd, &on) in fwds.iter().zip(&active) {
            if !on {
                continue;
            }
            // d/dθ of −λ·(−ℓ̄)/m is (λ/(m·L))·∇ log π.
            let scale = cfg.lambda / (m * fwd.len() as f64);
            let mut g = fwd.grad_sequence_log_prob();
            g.iter_mut().for_each(|x| *x *= scale);
            params.accumulate_vjp(fwd, &g, &mut gradient);
        }
    }
    Ok(SftCOutput {
        loss: positive_nll + penalty,
        gradient,
        penalty_active,
        positive_nll,
        negative_nll,
        penalty,
    })
}

/// Batch-mean per-token NLL of every negative in the batch and its gradient.
pub fn negative_nll(params: &PolicyParameters, batch: &[SftExample]) -> Result<(f64, Vec<f64>)> {
    non_empty(batch)?;
    let mut gradient = vec![0.0; params.len()];
    let mut total = 0.0;
    let m = batch.iter().map(|ex| ex.negatives.len()).sum::<usize>();
    if m == 0 {
        return Err(Error::Input("batch carries no negatives".into()));
    }
    for ex in batch {
        for y in &ex.negatives {
            let fwd = params.forward(&ex.context, y)?;
            total -= fwd.avg_token_log_prob();
            let scale = -1.0 / (m as f64 * fwd.len() as f64);
            let mut g = fwd.grad_sequence_log_prob();
            g.iter_mut().for_each(|x| *x *= scale);
            params.accumulate_vjp(&fwd, &g, &mut gradient);
        }
    }
    Ok((total / m as f64, gradient))
}

/// Label-smoothed cross-entropy: gold mass `1−ε`, `ε/(|V|−1)` on every other
/// token; summed over positions and averaged over the batch.
pub fn label_smoothing_sft_loss(
    params: &PolicyParameters,
    batch: &[SftExample],
    epsilon: f64,
) -> Result<SftOutput> {
    non_empty(batch)?;
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Config(format!(
            "label smoothing must lie in [0, 1), got {epsilon}"
        )));
    }
    let v = params.vocabulary().size();
    let off = epsilon / (v - 1) as f64;
    let n = batch.len() as f64;
    let mut gradient = vec![0.0; params.len()];
    let mut loss = 0.0;
    for ex in batch {
        let fwd = params.forward(&ex.context, &ex.positive)?;
        let mut g = vec![0.0; fwd.len() * v];
        for (l, &gold) in fwd.target().iter().enumerate() {
            let lp = fwd.log_probs_at(l);
            for k in 0..v {
                let q = if k == gold as usize {
                    1.0 - epsilon
                } else {
                    off
                };
                loss -= q * lp[k];
                g[l * v + k] = (lp[k].exp() - q) / n;
            }
        }
        params.accumulate_vjp(&fwd, &g, &mut gradient);
    }
    Ok(SftOutput {
        loss: loss / n,
        gradient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Architecture;

    fn seq(v: &[u32]) -> TokenSequence {
        TokenSequence::new(v.to_vec()).unwrap()
    }

    fn example(neg: &[&[u32]]) -> SftExample {
        SftExample {
            context: seq(&[1, 2]),
            positive: seq(&[3, 0, 5]),
            negatives: neg.iter().map(|n| seq(n)).collect(),
        }
    }

    #[test]
    fn sft_uniform_and_certain() {
        let p = PolicyParameters::zeros(Architecture::default()).unwrap();
        let batch = vec![
            SftExample::new(seq(&[1]), seq(&[7])),
            SftExample::new(seq(&[4, 4]), seq(&[9])),
        ];
        assert!((sft_loss(&p, &batch).unwrap().loss - 32f64.ln()).abs() < 1e-12);
        let arch = Architecture::linear(4, 2);
        let mut q = PolicyParameters::zeros(arch).unwrap();
        let n = q.len();
        q.as_mut_slice()[n - 4 + 2] = 900.0;
        let out = sft_loss(&q, &[SftExample::new(seq(&[0]), seq(&[2, 2]))]).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.gradient.iter().all(|g| g.abs() < 1e-300));
        assert!(sft_loss(&q, &[]).is_err());
    }

    #[test]
    fn penalty_boundary_and_linear_region() {
        // Uniform policy: every negative has per-token NLL ln 32.
        let p = PolicyParameters::zeros(Architecture::default()).unwrap();
        let batch = vec![example(&[&[1, 1], &[2, 2, 2]])];
        let c = 32f64.ln();
        let at = sft_c_loss(
            &p,
            &batch,
            &SftConfig {
                lambda: 0.1,
                threshold: c,
                per_sample: false,
            },
        )
        .unwrap();
        assert!(!at.penalty_active);
        assert_eq!(at.penalty, 0.0);
        assert_eq!(at.loss, at.positive_nll);
        let below = sft_c_loss(
            &p,
            &batch,
            &SftConfig {
                lambda: 0.1,
                threshold: c + 1.0,
                per_sample: false,
            },
        )
        .unwrap();
        assert!(below.penalty_active);
        assert!((below.penalty - 0.1).abs() < 1e-12);
        assert!((below.loss - below.positive_nll - 0.1).abs() < 1e-12);
    }

    #[test]
    fn lambda_zero_matches_sft() {
        let p = PolicyParameters::init_uniform(Architecture::default(), 4).unwrap();
        let batch = vec![example(&[&[3, 1, 5]]), example(&[&[9]])];
        let a = sft_c_loss(
            &p,
            &batch,
            &SftConfig {
                lambda: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        let b = sft_loss(&p, &batch).unwrap();
        assert_eq!(a.loss, b.loss);
        assert_eq!(a.gradient, b.gradient);
    }

    #[test]
    fn missing_negatives_rejected() {
        let p = PolicyParameters::zeros(Architecture::default()).unwrap();
        assert!(sft_c_loss(&p, &[example(&[])], &SftConfig::default()).is_err());
    }

    #[test]
    fn per_sample_relu_only_counts_violators() {
        let arch = Architecture::linear(4, 2);
        let mut p = PolicyParameters::zeros(arch).unwrap();
        let n = p.len();
        p.as_mut_slice()[n - 4] = 5.0; // token 0 is likely, others unlikely
        let ex = SftExample {
            context: seq(&[1]),
            positive: seq(&[0]),
            negatives: vec![seq(&[0]), seq(&[3])],
        };
        let lp: Vec<f64> = p.next_token_log_probs(&[1]).unwrap();
        let thr = 1.0;
        let out = sft_c_loss(
            &p,
            &[ex],
            &SftConfig {
                lambda: 2.0,
                threshold: thr,
                per_sample: true,
            },
        )
        .unwrap();
        let expected = 2.0 * ((thr + lp[0]).max(0.0) + (thr + lp[3]).max(0.0)) / 2.0;
        assert!((out.penalty - expected).abs() < 1e-12);
    }

    #[test]
    fn negative_nll_matches_penalty_gradient() {
        let p = PolicyParameters::init_uniform(Architecture::default(), 4).unwrap();
        let batch = vec![example(&[&[3, 1, 5], &[2]]), example(&[&[9, 9]])];
        let (nll, g) = negative_nll(&p, &batch).unwrap();
        let cfg = SftConfig {
            lambda: 1.0,
            threshold: 100.0,
            per_sample: false,
        };
        let c = sft_c_loss(&p, &batch, &cfg).unwrap();
        let s = sft_loss(&p, &batch).unwrap();
        assert!((c.negative_nll - nll).abs() < 1e-12);
        for ((cg, sg), ng) in c.gradient.iter().zip(&s.gradient).zip(&g) {
            assert!((cg - sg + ng).abs() < 1e-12);
        }
    }

    #[test]
    fn label_smoothing_reductions() {
        let p = PolicyParameters::init_uniform(Architecture::default(), 8).unwrap();
        let batch = vec![
            SftExample::new(seq(&[1, 2]), seq(&[3, 4, 5])),
            SftExample::new(seq(&[7]), seq(&[0])),
        ];
        let ls = label_smoothing_sft_loss(&p, &batch, 0.0).unwrap();
        let sft = sft_loss(&p, &batch).unwrap();
        assert!((ls.loss - sft.loss).abs() < 1e-12);
        for (a, b) in ls.gradient.iter().zip(&sft.gradient) {
            assert!((a - b).abs() < 1e-12);
        }
        let u = PolicyParameters::zeros(Architecture::default()).unwrap();
        let l0 = label_smoothing_sft_loss(&u, &batch, 0.0).unwrap().loss;
        let l1 = label_smoothing_sft_loss(&u, &batch, 0.4).unwrap().loss;
        assert!((l0 - l1).abs() < 1e-12);
        assert!(label_smoothing_sft_loss(&u, &batch, 1.0).is_err());
    }
}
