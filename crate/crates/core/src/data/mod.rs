//! Synthetic corpus, tiered and on-policy negatives, preference batches and
//! the held-out probe set.

mod grammar;
mod negatives;

pub use grammar::{Grammar, NUM_CLASSES};
pub use negatives::{
    build_preference_batch, classify_negative, sample_on_policy_negatives,
    synthesize_tiered_negatives, BatchStats, MixConfig, ON_POLICY_BEAM_WIDTH,
};

use std::collections::HashSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::TokenSequence;
use crate::seed::{indexed_seed, rng_for};

/// Difficulty of a negative, from the policy's point of view after SFT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Easy,
    Medium,
    Hard,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Easy, Tier::Medium, Tier::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Tier::Easy => "easy",
            Tier::Medium => "medium",
            Tier::Hard => "hard",
        }
    }
}

impl std::str::FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Tier::Easy),
            "medium" => Ok(Tier::Medium),
            "hard" => Ok(Tier::Hard),
            other => Err(Error::Config(format!(
                "unknown tier {other:?} (expected easy, medium or hard)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Dataset,
    OnPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NegativeTier {
    pub tier: Tier,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Negative {
    pub tokens: TokenSequence,
    pub tier: Tier,
    pub provenance: Provenance,
}

impl Negative {
    pub fn label(&self) -> NegativeTier {
        NegativeTier {
            tier: self.tier,
            provenance: self.provenance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: usize,
    pub context: TokenSequence,
    pub positive: TokenSequence,
    pub negatives: Vec<Negative>,
}

impl LabeledExample {
    pub fn negatives_of(&self, tier: Tier) -> impl Iterator<Item = &Negative> {
        self.negatives.iter().filter(move |n| n.tier == tier)
    }

    fn validate(&self) -> Result<()> {
        if let Some(n) = self.negatives.iter().find(|n| n.tokens == self.positive) {
            return Err(Error::Input(format!(
                "example {}: {} negative equals the positive",
                self.id,
                n.tier.name()
            )));
        }
        Ok(())
    }
}

/// `(x, y_w, y_l)` with the loser's provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub example_id: usize,
    pub context: TokenSequence,
    pub winner: TokenSequence,
    pub loser: TokenSequence,
    pub loser_tier: NegativeTier,
}

impl PreferencePair {
    pub fn new(
        example_id: usize,
        context: TokenSequence,
        winner: TokenSequence,
        loser: TokenSequence,
        loser_tier: NegativeTier,
    ) -> Result<Self> {
        if winner == loser {
            return Err(Error::Input(format!(
                "example {example_id}: winner and loser are identical"
            )));
        }
        Ok(Self {
            example_id,
            context,
            winner,
            loser,
            loser_tier,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub vocab_size: usize,
    pub corpus_size: usize,
    pub context_len: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Fraction of the corpus used for Stage 1; the rest feeds Stage 2.
    pub split: f64,
    pub probe_size: usize,
    /// Size of the held-out pool the probe set is drawn from.
    pub holdout_pool: usize,
    /// Sharpness of the within-class index distribution.
    pub concentration: f64,
    /// Probability that a Stage-2 loser comes from the dataset rather than the
    /// policy. The trainer reads `MixConfig::rho`; experiment drivers copy this
    /// value there.
    pub mix: f64,
    /// Largest allowed circular step between consecutive indices.
    pub index_radius: usize,
    pub negatives_per_tier: usize,
    /// Data stream seed; experiments derive it from their top-level seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            vocab_size: 32,
            corpus_size: 2000,
            context_len: 3,
            min_len: 5,
            max_len: 8,
            split: 0.75,
            probe_size: 256,
            holdout_pool: 1000,
            concentration: 1.0,
            mix: 0.8,
            index_radius: 2,
            negatives_per_tier: 2,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let grammar = Grammar::new(self.vocab_size, self.concentration, self.index_radius)?;
        if 2 * self.index_radius + 1 >= grammar.class_size() {
            return Err(Error::Config(format!(
                "index_radius {} leaves no out-of-window index among {} (medium negatives need one)",
                self.index_radius,
                grammar.class_size()
            )));
        }
        if self.corpus_size < 2 {
            return Err(Error::Config("corpus_size must be >= 2".into()));
        }
        if self.context_len == 0 {
            return Err(Error::Config("context_len must be >= 1".into()));
        }
        if self.min_len < 2 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "length range must satisfy 2 <= min_len <= max_len, got {}..={}",
                self.min_len, self.max_len
            )));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::Config(format!(
                "split must lie in (0, 1), got {}",
                self.split
            )));
        }
        if !(0.0..=1.0).contains(&self.mix) {
            return Err(Error::Config(format!(
                "mix must lie in [0, 1], got {}",
                self.mix
            )));
        }
        if self.negatives_per_tier == 0 {
            return Err(Error::Config("negatives_per_tier must be >= 1".into()));
        }
        Ok(())
    }

    pub fn grammar(&self) -> Result<Grammar> {
        Grammar::new(self.vocab_size, self.concentration, self.index_radius)
    }

    /// Number of Stage-1 examples; at least one example lands on each side.
    pub fn stage1_count(&self) -> usize {
        ((self.corpus_size as f64 * self.split).round() as usize).clamp(1, self.corpus_size - 1)
    }
}

fn sample_example<R: Rng>(
    spec: &DatasetSpec,
    grammar: &Grammar,
    id: usize,
    stream: &str,
    rng: &mut R,
) -> Result<LabeledExample> {
    let context = TokenSequence::new(
        (0..spec.context_len)
            .map(|_| rng.random_range(0..spec.vocab_size as u32))
            .collect(),
    )?;
    let len = rng.random_range(spec.min_len..=spec.max_len);
    let positive = grammar.sample_positive(&context, len, rng)?;
    let mut ex = LabeledExample {
        id,
        context,
        positive,
        negatives: Vec::new(),
    };
    for (k, tier) in Tier::ALL.into_iter().enumerate() {
        let seed = indexed_seed(spec.seed, stream, (id * Tier::ALL.len() + k) as u64);
        for tokens in
            synthesize_tiered_negatives(grammar, &ex, tier, spec.negatives_per_tier, seed)?
        {
            ex.negatives.push(Negative {
                tokens,
                tier,
                provenance: Provenance::Dataset,
            });
        }
    }
    Ok(ex)
}

/// Training corpus: `corpus_size` grammatical examples, each with
/// `negatives_per_tier` dataset negatives of every tier.
pub fn generate_corpus(spec: &DatasetSpec) -> Result<Vec<LabeledExample>> {
    spec.validate()?;
    let grammar = spec.grammar()?;
    let mut rng = rng_for(spec.seed, "data");
    (0..spec.corpus_size)
        .map(|id| sample_example(spec, &grammar, id, "data-negatives", &mut rng))
        .collect()
}

/// `(stage-1, stage-2)` halves of a corpus.
pub fn split_corpus<'a>(
    spec: &DatasetSpec,
    corpus: &'a [LabeledExample],
) -> (&'a [LabeledExample], &'a [LabeledExample]) {
    corpus.split_at(spec.stage1_count().min(corpus.len()))
}

/// Held-out probe examples, disjoint from the training corpus.
///
/// A pool of `holdout_pool` examples is drawn from a separate stream; any
/// `(context, positive)` already present in the corpus is discarded and the
/// first `probe_size` survivors are kept.
pub fn build_probe_set(
    spec: &DatasetSpec,
    corpus: &[LabeledExample],
) -> Result<Vec<LabeledExample>> {
    spec.validate()?;
    if spec.probe_size > spec.holdout_pool {
        return Err(Error::Config(format!(
            "probe_size {} exceeds the held-out pool of {}",
            spec.probe_size, spec.holdout_pool
        )));
    }
    let grammar = spec.grammar()?;
    let train: HashSet<(&TokenSequence, &TokenSequence)> =
        corpus.iter().map(|e| (&e.context, &e.positive)).collect();
    let mut rng = rng_for(spec.seed, "probe");
    let mut probe = Vec::with_capacity(spec.probe_size);
    for k in 0..spec.holdout_pool {
        let mut ex = sample_example(spec, &grammar, k, "probe-negatives", &mut rng)?;
        if train.contains(&(&ex.context, &ex.positive)) {
            continue;
        }
        ex.id = probe.len();
        probe.push(ex);
        if probe.len() == spec.probe_size {
            return Ok(probe);
        }
    }
    Err(Error::Config(format!(
        "only {} held-out examples are disjoint from training; probe_size {} requested",
        probe.len(),
        spec.probe_size
    )))
}

pub fn write_examples(path: &Path, examples: &[LabeledExample]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_examples(path: &Path) -> Result<Vec<LabeledExample>> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: LabeledExample = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: format!("line {}: {e}", n + 1),
        })?;
        ex.validate().map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: format!("line {}: {e}", n + 1),
        })?;
        out.push(ex);
    }
    Ok(out)
}
