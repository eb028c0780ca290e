//! The synthetic regular language that positives are drawn from.
//!
//! Tokens are split into four classes by `t % 4`; `t / 4` is the token's
//! index within its class. A positive continues the class cycle one step past
//! the last context token. Each body index stays within `radius` (circularly)
//! of the preceding token's index, drawn from a discrete Laplace over that
//! window. The final token is a checksum whose index is the sum of the body
//! indices modulo `|V| / 4`.
//!
//! Class and step-size rules are local and visible to a next-token model;
//! the checksum is the one global constraint.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};
use crate::policy::TokenSequence;

pub const NUM_CLASSES: usize = 4;

/// Vocabulary-aware view of the grammar.
#[derive(Debug, Clone)]
pub struct Grammar {
    vocab_size: usize,
    radius: usize,
    index_weights: Vec<Vec<f64>>,
}

impl Grammar {
    /// `concentration` controls how sharply indices cluster around the
    /// previous index; `radius` bounds the allowed step.
    pub fn new(vocab_size: usize, concentration: f64, radius: usize) -> Result<Self> {
        if vocab_size < 2 * NUM_CLASSES || !vocab_size.is_multiple_of(NUM_CLASSES) {
            return Err(Error::Config(format!(
                "vocabulary size must be a multiple of {NUM_CLASSES} and at least {}, got {vocab_size}",
                2 * NUM_CLASSES
            )));
        }
        if !(concentration.is_finite() && concentration >= 0.0) {
            return Err(Error::Config(format!(
                "concentration must be finite and >= 0, got {concentration}"
            )));
        }
        if radius == 0 {
            return Err(Error::Config("index radius must be >= 1".into()));
        }
        let m = vocab_size / NUM_CLASSES;
        let index_weights = (0..m)
            .map(|mu| {
                (0..m)
                    .map(|j| {
                        let d = circular_distance(j, mu, m);
                        if d > radius {
                            0.0
                        } else {
                            (-concentration * d as f64).exp()
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            vocab_size,
            radius,
            index_weights,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Number of tokens per class.
    pub fn class_size(&self) -> usize {
        self.vocab_size / NUM_CLASSES
    }

    pub fn class_of(t: u32) -> usize {
        t as usize % NUM_CLASSES
    }

    pub fn index_of(t: u32) -> usize {
        t as usize / NUM_CLASSES
    }

    pub fn token(class: usize, index: usize) -> u32 {
        (index * NUM_CLASSES + class) as u32
    }

    /// Class that position `i` of a continuation of `context` must carry.
    pub fn expected_class(context: &TokenSequence, i: usize) -> usize {
        let last = *context.tokens().last().expect("non-empty");
        (Self::class_of(last) + 1 + i) % NUM_CLASSES
    }

    /// Probability of each within-class index after token `prev`.
    pub fn index_distribution(&self, prev: u32) -> Vec<f64> {
        let w = &self.index_weights[Self::index_of(prev)];
        let z: f64 = w.iter().sum();
        w.iter().map(|x| x / z).collect()
    }

    /// Draw a grammatical continuation of length `len`.
    pub fn sample_positive<R: Rng>(
        &self,
        context: &TokenSequence,
        len: usize,
        rng: &mut R,
    ) -> Result<TokenSequence> {
        if len == 0 {
            return Err(Error::Config("positive length must be >= 1".into()));
        }
        let m = self.class_size();
        let mut prev = *context.tokens().last().expect("non-empty");
        let mut tokens = Vec::with_capacity(len);
        let mut sum = 0;
        for i in 0..len - 1 {
            let j = WeightedIndex::new(&self.index_weights[Self::index_of(prev)])
                .map_err(|e| Error::Config(e.to_string()))?
                .sample(rng);
            sum += j;
            prev = Self::token(Self::expected_class(context, i), j);
            tokens.push(prev);
        }
        tokens.push(Self::token(Self::expected_class(context, len - 1), sum % m));
        TokenSequence::new(tokens)
    }

    /// Positions whose class breaks the cycle.
    pub fn class_violations(context: &TokenSequence, y: &TokenSequence) -> usize {
        y.tokens()
            .iter()
            .enumerate()
            .filter(|&(i, &t)| Self::class_of(t) != Self::expected_class(context, i))
            .count()
    }

    /// Whether index `j` may follow a token with index `prev_index`.
    pub fn step_allowed(&self, prev_index: usize, j: usize) -> bool {
        circular_distance(j, prev_index, self.class_size()) <= self.radius
    }

    /// Body positions whose index jumps further than `radius` from the
    /// preceding token. The checksum position is exempt.
    pub fn step_violations(&self, context: &TokenSequence, y: &TokenSequence) -> usize {
        let toks = y.tokens();
        let mut prev = *context.tokens().last().expect("non-empty");
        let mut n = 0;
        for &t in &toks[..toks.len() - 1] {
            if !self.step_allowed(Self::index_of(prev), Self::index_of(t)) {
                n += 1;
            }
            prev = t;
        }
        n
    }

    /// Local rule violations: class breaks plus oversized steps.
    pub fn local_violations(&self, context: &TokenSequence, y: &TokenSequence) -> usize {
        Self::class_violations(context, y) + self.step_violations(context, y)
    }

    pub fn checksum_holds(&self, y: &TokenSequence) -> bool {
        let toks = y.tokens();
        let (last, body) = toks.split_last().expect("non-empty");
        let sum: usize = body.iter().map(|&t| Self::index_of(t)).sum();
        Self::index_of(*last) == sum % self.class_size()
    }

    /// Whether `y` is a grammatical continuation of `context`.
    pub fn accepts(&self, context: &TokenSequence, y: &TokenSequence) -> bool {
        y.tokens().iter().all(|&t| (t as usize) < self.vocab_size)
            && self.local_violations(context, y) == 0
            && self.checksum_holds(y)
    }
}

fn circular_distance(a: usize, b: usize, m: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(m - d)
}
