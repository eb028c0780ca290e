//! Cooling-weight traces on curated negatives of every tier.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{
    synthesize_tiered_negatives, Grammar, LabeledExample, Negative, Provenance, Tier,
};
use crate::error::{Error, Result};
use crate::objectives::{cooling_weight, CoolingConfig};
use crate::policy::PolicyParameters;
use crate::seed::indexed_seed;

/// One curated negative's cooling weight at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurriculumRecord {
    pub step: usize,
    pub example_id: usize,
    pub negative: usize,
    pub tier: Tier,
    pub avg_log_prob: f64,
    pub weight: f64,
}

/// The first `examples` probe examples with freshly synthesised negatives,
/// `per_tier` of each tier.
pub fn curated_negatives(
    grammar: &Grammar,
    probe: &[LabeledExample],
    examples: usize,
    per_tier: usize,
    seed: u64,
) -> Result<Vec<LabeledExample>> {
    if probe.len() < examples {
        return Err(Error::Config(format!(
            "{examples} curated examples requested from a probe set of {}",
            probe.len()
        )));
    }
    probe[..examples]
        .iter()
        .map(|ex| {
            let mut out = LabeledExample {
                negatives: Vec::new(),
                ..ex.clone()
            };
            for (k, tier) in Tier::ALL.into_iter().enumerate() {
                let s = indexed_seed(seed, "curated", (ex.id * Tier::ALL.len() + k) as u64);
                for tokens in synthesize_tiered_negatives(grammar, ex, tier, per_tier, s)? {
                    out.negatives.push(Negative {
                        tokens,
                        tier,
                        provenance: Provenance::Dataset,
                    });
                }
            }
            Ok(out)
        })
        .collect()
}

/// Cooling weight of every curated negative under `params`.
pub fn measure_curriculum(
    params: &PolicyParameters,
    fixtures: &[LabeledExample],
    cooling: &CoolingConfig,
    step: usize,
) -> Result<Vec<CurriculumRecord>> {
    let mut out = Vec::new();
    for ex in fixtures {
        for (i, neg) in ex.negatives.iter().enumerate() {
            let lbar = params
                .forward(&ex.context, &neg.tokens)?
                .avg_token_log_prob();
            out.push(CurriculumRecord {
                step,
                example_id: ex.id,
                negative: i,
                tier: neg.tier,
                avg_log_prob: lbar,
                weight: cooling_weight(lbar, cooling),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumTrace {
    pub steps: Vec<usize>,
    /// Mean weight per tier, aligned with `steps`.
    pub mean_weight: BTreeMap<Tier, Vec<f64>>,
    /// First traced step at which the tier's mean weight drops below 1/2;
    /// `None` if it never does.
    pub half_weight_step: BTreeMap<Tier, Option<usize>>,
}

impl CurriculumTrace {
    /// Time-to-half-weight with "never" ordered after every finite step.
    pub fn half_weight_time(&self, tier: Tier) -> f64 {
        match self.half_weight_step.get(&tier).copied().flatten() {
            Some(s) => s as f64,
            None => f64::INFINITY,
        }
    }

    pub fn final_mean(&self, tier: Tier) -> Option<f64> {
        self.mean_weight.get(&tier).and_then(|v| v.last().copied())
    }
}

/// Aggregate raw records into per-tier mean weights per step.
pub fn cooling_weight_trace(records: &[CurriculumRecord]) -> CurriculumTrace {
    let mut by_step: BTreeMap<usize, BTreeMap<Tier, (f64, usize)>> = BTreeMap::new();
    for r in records {
        let e = by_step
            .entry(r.step)
            .or_default()
            .entry(r.tier)
            .or_insert((0.0, 0));
        e.0 += r.weight;
        e.1 += 1;
    }
    let steps: Vec<usize> = by_step.keys().copied().collect();
    let mut mean_weight: BTreeMap<Tier, Vec<f64>> = BTreeMap::new();
    let mut half_weight_step: BTreeMap<Tier, Option<usize>> = BTreeMap::new();
    for (&step, tiers) in &by_step {
        for (&tier, &(sum, n)) in tiers {
            let m = sum / n as f64;
            mean_weight.entry(tier).or_default().push(m);
            let half = half_weight_step.entry(tier).or_insert(None);
            if half.is_none() && m < 0.5 {
                *half = Some(step);
            }
        }
    }
    CurriculumTrace {
        steps,
        mean_weight,
        half_weight_step,
    }
}
