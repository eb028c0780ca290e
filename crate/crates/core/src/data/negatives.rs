//! Tiered dataset negatives, beam-search on-policy negatives, and mixed
//! preference batches.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grammar::{Grammar, NUM_CLASSES};
use super::{LabeledExample, NegativeTier, PreferencePair, Provenance, Tier};
use crate::error::{Error, Result};
use crate::policy::{sample_sequence, PolicyParameters, SamplingStrategy, TokenSequence};

pub const ON_POLICY_BEAM_WIDTH: usize = 5;

const MAX_DISTINCT_ATTEMPTS: usize = 64;

/// Corrupt the example's positive into `count` negatives of the given tier.
///
/// * hard: the checksum token swapped for another index of its class. Every
///   local rule still holds; only the global checksum breaks.
/// * medium: two body positions given same-class indices one step beyond the
///   allowed window around their predecessor.
/// * easy: at least half of the positions replaced by wrong-class tokens.
///
/// Negatives are distinct from one another when the edit space allows it.
pub fn synthesize_tiered_negatives(
    grammar: &Grammar,
    example: &LabeledExample,
    tier: Tier,
    count: usize,
    seed: u64,
) -> Result<Vec<TokenSequence>> {
    if count == 0 {
        return Err(Error::Config("negative count must be >= 1".into()));
    }
    let len = example.positive.len();
    match tier {
        Tier::Medium if len < 3 => {
            return Err(Error::Generation(format!(
                "medium negatives need two body positions; example {} has length {len}",
                example.id
            )));
        }
        Tier::Medium if 2 * grammar.radius() + 1 >= grammar.class_size() => {
            return Err(Error::Generation(format!(
                "medium negatives need indices outside the step window; radius {} covers all {} indices",
                grammar.radius(),
                grammar.class_size()
            )));
        }
        Tier::Hard if grammar.class_size() < 2 => {
            return Err(Error::Generation(
                "hard negatives need at least two indices per class".into(),
            ));
        }
        _ => {}
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<TokenSequence> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut candidate = corrupt(grammar, example, tier, &mut rng)?;
        for _ in 0..MAX_DISTINCT_ATTEMPTS {
            if !out.contains(&candidate) {
                break;
            }
            candidate = corrupt(grammar, example, tier, &mut rng)?;
        }
        out.push(candidate);
    }
    Ok(out)
}

fn corrupt<R: Rng>(
    grammar: &Grammar,
    example: &LabeledExample,
    tier: Tier,
    rng: &mut R,
) -> Result<TokenSequence> {
    let mut toks = example.positive.tokens().to_vec();
    let len = toks.len();
    let m = grammar.class_size();
    match tier {
        Tier::Hard => {
            let last = len - 1;
            let current = Grammar::index_of(toks[last]);
            let j = (current + rng.random_range(1..m)) % m;
            toks[last] = Grammar::token(Grammar::class_of(toks[last]), j);
        }
        Tier::Medium => {
            let mut positions = index::sample(rng, len - 1, 2).into_vec();
            positions.sort_unstable();
            for p in positions {
                let prev = if p == 0 {
                    *example.context.tokens().last().expect("non-empty")
                } else {
                    toks[p - 1]
                };
                let current = Grammar::index_of(toks[p]);
                // Smallest illegal step: one past the window on either side.
                let pi = Grammar::index_of(prev);
                let r = grammar.radius();
                let mut far: Vec<usize> = [(pi + r + 1) % m, (pi + m - (r + 1) % m) % m]
                    .into_iter()
                    .filter(|&j| j != current && !grammar.step_allowed(pi, j))
                    .collect();
                // An earlier edit can move the predecessor so that the only
                // out-of-window index is the current one.
                if far.is_empty() {
                    far = (0..m)
                        .filter(|&j| j != current && !grammar.step_allowed(pi, j))
                        .collect();
                }
                if far.is_empty() {
                    far = (0..m).filter(|&j| j != current).collect();
                }
                let j = *far.choose(rng).expect("class holds at least two indices");
                toks[p] = Grammar::token(Grammar::class_of(toks[p]), j);
            }
        }
        Tier::Easy => {
            let k = rng.random_range(len.div_ceil(2)..=len);
            for p in index::sample(rng, len, k) {
                let own = Grammar::class_of(toks[p]);
                let class = (own + rng.random_range(1..NUM_CLASSES)) % NUM_CLASSES;
                toks[p] = Grammar::token(class, rng.random_range(0..m));
            }
        }
    }
    TokenSequence::new(toks)
}

/// Tier of an arbitrary negative from its rule violations: none is hard,
/// wrong-class tokens on at least half of the positions is easy, anything
/// else is medium.
pub fn classify_negative(
    grammar: &Grammar,
    context: &TokenSequence,
    candidate: &TokenSequence,
) -> Tier {
    if grammar.local_violations(context, candidate) == 0 {
        Tier::Hard
    } else if Grammar::class_violations(context, candidate) >= candidate.len().div_ceil(2) {
        Tier::Easy
    } else {
        Tier::Medium
    }
}

/// Up to `k` beam-search continuations that differ from the positive, in a
/// seeded random order. Empty when every beam reproduces the positive.
pub fn sample_on_policy_negatives(
    params: &PolicyParameters,
    example: &LabeledExample,
    k: usize,
    seed: u64,
) -> Result<Vec<TokenSequence>> {
    if k == 0 {
        return Err(Error::Config(
            "on-policy negative count must be >= 1".into(),
        ));
    }
    let beams = sample_sequence(
        params,
        &example.context,
        example.positive.len(),
        SamplingStrategy::Beam {
            width: ON_POLICY_BEAM_WIDTH,
        },
    )?;
    let mut survivors: Vec<TokenSequence> = beams
        .into_iter()
        .map(|c| c.tokens)
        .filter(|t| *t != example.positive)
        .collect();
    survivors.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    survivors.truncate(k);
    Ok(survivors)
}

/// How Stage-2 losers are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixConfig {
    /// Probability of a dataset loser; the complement is on-policy.
    pub rho: f64,
    /// Relative weight of each tier (easy, medium, hard) among dataset losers.
    pub tier_weights: [f64; 3],
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            rho: 0.8,
            tier_weights: [0.5, 0.4, 0.1],
        }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!(
                "mix fraction must lie in [0, 1], got {}",
                self.rho
            )));
        }
        if self
            .tier_weights
            .iter()
            .any(|w| !(w.is_finite() && *w >= 0.0))
            || self.tier_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Config(
                "tier weights must be non-negative with a positive sum".into(),
            ));
        }
        Ok(())
    }
}

fn dataset_loser<R: Rng>(
    example: &LabeledExample,
    weights: &[f64; 3],
    rng: &mut R,
) -> Result<(TokenSequence, NegativeTier)> {
    let masked: Vec<f64> = Tier::ALL
        .iter()
        .zip(weights)
        .map(|(&t, &w)| {
            if example.negatives_of(t).next().is_some() {
                w
            } else {
                0.0
            }
        })
        .collect();
    let dist = WeightedIndex::new(&masked).map_err(|_| {
        Error::Input(format!(
            "example {} has no dataset negatives of any weighted tier",
            example.id
        ))
    })?;
    let tier = Tier::ALL[dist.sample(rng)];
    let options: Vec<_> = example.negatives_of(tier).collect();
    let neg = options.choose(rng).expect("tier is non-empty");
    Ok((
        neg.tokens.clone(),
        NegativeTier {
            tier,
            provenance: neg.provenance,
        },
    ))
}

/// Draw `batch_size` preference pairs from `examples` (with replacement).
///
/// Each loser is a dataset negative with probability `mix.rho`, otherwise a
/// beam-search sample from `params`; when the beam yields nothing but the
/// positive, a dataset negative is used instead and recorded as such.
/// On-policy losers are tiered with [`classify_negative`].
pub fn build_preference_batch(
    grammar: &Grammar,
    examples: &[LabeledExample],
    params: &PolicyParameters,
    mix: &MixConfig,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<PreferencePair>> {
    mix.validate()?;
    if examples.is_empty() {
        return Err(Error::Input(
            "cannot build a batch from an empty corpus".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let ex = examples.choose(&mut rng).expect("non-empty");
        let from_dataset = rng.random_bool(mix.rho);
        let sample_seed: u64 = rng.random();
        let mut loser = None;
        if !from_dataset {
            if let Some(y) = sample_on_policy_negatives(params, ex, 1, sample_seed)?.pop() {
                let tier = classify_negative(grammar, &ex.context, &y);
                loser = Some((
                    y,
                    NegativeTier {
                        tier,
                        provenance: Provenance::OnPolicy,
                    },
                ));
            }
        }
        let (y_l, label) = match loser {
            Some(l) => l,
            None => dataset_loser(ex, &mix.tier_weights, &mut rng)?,
        };
        out.push(PreferencePair::new(
            ex.id,
            ex.context.clone(),
            ex.positive.clone(),
            y_l,
            label,
        )?);
    }
    Ok(out)
}

/// Provenance and tier counts of a batch, recomputed from its records.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub total: usize,
    pub dataset: usize,
    pub on_policy: usize,
    pub by_tier: BTreeMap<Tier, usize>,
}

impl BatchStats {
    pub fn from_pairs(pairs: &[PreferencePair]) -> Self {
        let mut s = BatchStats {
            total: pairs.len(),
            ..Default::default()
        };
        for p in pairs {
            match p.loser_tier.provenance {
                Provenance::Dataset => s.dataset += 1,
                Provenance::OnPolicy => s.on_policy += 1,
            }
            *s.by_tier.entry(p.loser_tier.tier).or_default() += 1;
        }
        s
    }

    pub fn dataset_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.dataset as f64 / self.total as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_corpus, DatasetSpec, Negative};
    use crate::policy::Architecture;

    fn corpus(n: usize) -> (DatasetSpec, Vec<LabeledExample>) {
        let spec = DatasetSpec {
            corpus_size: n,
            seed: 9,
            ..DatasetSpec::default()
        };
        let c = generate_corpus(&spec).unwrap();
        (spec, c)
    }

    #[test]
    fn tier_edit_rules() {
        let (spec, c) = corpus(40);
        let g = spec.grammar().unwrap();
        for ex in &c {
            let l = ex.positive.len();
            for y in synthesize_tiered_negatives(&g, ex, Tier::Hard, 3, 1).unwrap() {
                assert_eq!(y.hamming(&ex.positive), 1);
                assert_eq!(g.local_violations(&ex.context, &y), 0);
                assert!(!g.checksum_holds(&y));
                assert_eq!(classify_negative(&g, &ex.context, &y), Tier::Hard);
            }
            for y in synthesize_tiered_negatives(&g, ex, Tier::Medium, 3, 2).unwrap() {
                assert_eq!(y.hamming(&ex.positive), 2);
                assert_eq!(Grammar::class_violations(&ex.context, &y), 0);
                // Each edit jumps out of the window; the token after it may too.
                assert!((2..=4).contains(&g.step_violations(&ex.context, &y)));
                assert_eq!(y.tokens().last(), ex.positive.tokens().last());
            }
            for y in synthesize_tiered_negatives(&g, ex, Tier::Easy, 3, 3).unwrap() {
                assert!(y.hamming(&ex.positive) >= l.div_ceil(2));
                assert_eq!(classify_negative(&g, &ex.context, &y), Tier::Easy);
            }
        }
    }

    #[test]
    fn medium_without_room_is_generation_error() {
        let (spec, c) = corpus(2);
        let g = spec.grammar().unwrap();
        let mut ex = c[0].clone();
        ex.positive = TokenSequence::new(ex.positive.tokens()[..2].to_vec()).unwrap();
        assert!(matches!(
            synthesize_tiered_negatives(&g, &ex, Tier::Medium, 1, 0),
            Err(Error::Generation(_))
        ));
        let wide = Grammar::new(32, 1.0, 4).unwrap();
        assert!(matches!(
            synthesize_tiered_negatives(&wide, &c[1], Tier::Medium, 1, 0),
            Err(Error::Generation(_))
        ));
        ex.positive = TokenSequence::new(vec![ex.positive.tokens()[0]]).unwrap();
        assert_eq!(
            synthesize_tiered_negatives(&g, &ex, Tier::Easy, 1, 0).unwrap()[0]
                .hamming(&ex.positive),
            1
        );
        assert!(synthesize_tiered_negatives(&g, &ex, Tier::Hard, 0, 0).is_err());
    }

    #[test]
    fn on_policy_excludes_positive() {
        let (_, c) = corpus(5);
        let p = PolicyParameters::init_uniform(Architecture::default(), 2).unwrap();
        for ex in &c {
            let got = sample_on_policy_negatives(&p, ex, 10, 4).unwrap();
            assert!(got.len() <= ON_POLICY_BEAM_WIDTH);
            assert!(got
                .iter()
                .all(|y| *y != ex.positive && y.len() == ex.positive.len()));
            assert_eq!(got, sample_on_policy_negatives(&p, ex, 10, 4).unwrap());
        }
    }

    fn grammar() -> Grammar {
        DatasetSpec::default().grammar().unwrap()
    }

    fn certain_policy() -> PolicyParameters {
        // Linear policy that emits token 1 with probability 1 in f64.
        let arch = Architecture::linear(8, 4);
        let mut p = PolicyParameters::zeros(arch).unwrap();
        let b_out = p.len() - 8;
        p.as_mut_slice()[b_out + 1] = 1000.0;
        p
    }

    #[test]
    fn policy_emitting_positive_gives_empty() {
        let ex = LabeledExample {
            id: 0,
            context: TokenSequence::new(vec![0]).unwrap(),
            positive: TokenSequence::new(vec![1, 1, 1]).unwrap(),
            negatives: vec![],
        };
        assert!(sample_on_policy_negatives(&certain_policy(), &ex, 5, 0)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn on_policy_fallback_records_dataset() {
        let neg = Negative {
            tokens: TokenSequence::new(vec![2, 2]).unwrap(),
            tier: Tier::Easy,
            provenance: Provenance::Dataset,
        };
        let ex = LabeledExample {
            id: 0,
            context: TokenSequence::new(vec![0]).unwrap(),
            positive: TokenSequence::new(vec![1, 1]).unwrap(),
            negatives: vec![neg.clone()],
        };
        let batch = build_preference_batch(
            &grammar(),
            &[ex],
            &certain_policy(),
            &MixConfig {
                rho: 0.0,
                ..MixConfig::default()
            },
            4,
            1,
        )
        .unwrap();
        for pr in &batch {
            assert_eq!(pr.loser, neg.tokens);
            assert_eq!(
                pr.loser_tier,
                NegativeTier {
                    tier: Tier::Easy,
                    provenance: Provenance::Dataset
                }
            );
        }
    }

    #[test]
    fn mix_fraction_concentrates() {
        let (_, c) = corpus(30);
        // rho = 0.5 over 10,000 pairs; a policy whose beams always differ from the positive.
        let p = PolicyParameters::init_uniform(Architecture::linear(32, 4), 0).unwrap();
        let batch = build_preference_batch(
            &grammar(),
            &c,
            &p,
            &MixConfig {
                rho: 0.5,
                ..MixConfig::default()
            },
            10_000,
            17,
        )
        .unwrap();
        let f = BatchStats::from_pairs(&batch).dataset_fraction();
        assert!((f - 0.5).abs() <= 0.02, "dataset fraction {f}");
    }

    #[test]
    fn batch_stats_recompute() {
        let (_, c) = corpus(10);
        let p = PolicyParameters::init_uniform(Architecture::default(), 1).unwrap();
        let batch =
            build_preference_batch(&grammar(), &c, &p, &MixConfig::default(), 64, 2).unwrap();
        let s = BatchStats::from_pairs(&batch);
        assert_eq!(s.dataset + s.on_policy, 64);
        assert_eq!(s.by_tier.values().sum::<usize>(), 64);
        assert_eq!(
            batch,
            build_preference_batch(&grammar(), &c, &p, &MixConfig::default(), 64, 2).unwrap()
        );
    }
}
