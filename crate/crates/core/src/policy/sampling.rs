//! Decoding from the policy: greedy, top-k stochastic, and beam search.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{PolicyParameters, TokenSequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplingStrategy {
    Greedy,
    /// Sample from the renormalised `k` most likely tokens at each step.
    TopK {
        k: usize,
        seed: u64,
    },
    /// Keep the `width` best partial sequences by cumulative log-probability.
    Beam {
        width: usize,
    },
}

/// A decoded continuation with its log-probability under the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub tokens: TokenSequence,
    pub log_prob: f64,
}

/// Decode up to `max_len` tokens after `context`.
///
/// Greedy and top-k return one candidate. Beam search returns up to `width`
/// distinct candidates sorted by non-increasing sequence log-probability.
pub fn sample_sequence(
    params: &PolicyParameters,
    context: &TokenSequence,
    max_len: usize,
    strategy: SamplingStrategy,
) -> Result<Vec<Candidate>> {
    if max_len == 0 {
        return Err(Error::Config("max_len must be >= 1".into()));
    }
    params.vocabulary().check(context)?;
    match strategy {
        SamplingStrategy::Greedy => {
            let mut prefix = context.tokens().to_vec();
            let mut lp = 0.0;
            for _ in 0..max_len {
                let dist = params.next_token_log_probs(&prefix)?;
                let best = argmax(&dist);
                lp += dist[best];
                prefix.push(best as u32);
            }
            Ok(vec![finish(prefix, context.len(), lp)])
        }
        SamplingStrategy::TopK { k, seed } => {
            if k == 0 {
                return Err(Error::Config("top-k requires k >= 1".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut prefix = context.tokens().to_vec();
            let mut lp = 0.0;
            for _ in 0..max_len {
                let dist = params.next_token_log_probs(&prefix)?;
                let top = ranked(&dist);
                let top = &top[..k.min(top.len())];
                let mass: f64 = top.iter().map(|&t| dist[t].exp()).sum();
                let mut u = rng.random::<f64>() * mass;
                let mut pick = top[top.len() - 1];
                for &t in top {
                    u -= dist[t].exp();
                    if u <= 0.0 {
                        pick = t;
                        break;
                    }
                }
                lp += dist[pick];
                prefix.push(pick as u32);
            }
            Ok(vec![finish(prefix, context.len(), lp)])
        }
        SamplingStrategy::Beam { width } => beam_search(params, context, max_len, width),
    }
}

fn beam_search(
    params: &PolicyParameters,
    context: &TokenSequence,
    max_len: usize,
    width: usize,
) -> Result<Vec<Candidate>> {
    if width < 1 {
        return Err(Error::Config("beam width must be >= 1".into()));
    }
    let mut beams: Vec<(Vec<u32>, f64)> = vec![(context.tokens().to_vec(), 0.0)];
    for _ in 0..max_len {
        let mut expanded: Vec<(Vec<u32>, f64)> =
            Vec::with_capacity(beams.len() * params.vocabulary().size());
        for (prefix, lp) in &beams {
            let dist = params.next_token_log_probs(prefix)?;
            for (t, &d) in dist.iter().enumerate() {
                // Continuations with zero probability in f64 are never proposed.
                if (lp + d).exp() == 0.0 {
                    continue;
                }
                let mut next = prefix.clone();
                next.push(t as u32);
                expanded.push((next, lp + d));
            }
        }
        // Ties resolve lexicographically so decoding is a pure function of θ.
        expanded.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        expanded.truncate(width);
        beams = expanded;
    }
    Ok(beams
        .into_iter()
        .map(|(prefix, lp)| finish(prefix, context.len(), lp))
        .collect())
}

fn finish(prefix: Vec<u32>, context_len: usize, log_prob: f64) -> Candidate {
    let tokens = TokenSequence::new(prefix[context_len..].to_vec()).expect("max_len >= 1");
    Candidate { tokens, log_prob }
}

fn argmax(xs: &[f64]) -> usize {
    ranked(xs)[0]
}

/// Indices sorted by descending value, ties by ascending index.
pub(crate) fn ranked(xs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[b].total_cmp(&xs[a]).then(a.cmp(&b)));
    idx
}
