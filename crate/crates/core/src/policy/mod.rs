//! Small deterministic autoregressive token policy with exact gradients.

mod io;
mod model;
mod sampling;

pub use io::{FORMAT_VERSION, MAGIC};
pub use model::{
    avg_token_log_prob, forward_logits, logit_jacobian, predictive_entropy, sequence_log_prob,
    Architecture, Forward, LogitSequence, PolicyParameters, TokenSequence, Vocabulary,
    DENSE_JACOBIAN_PARAM_CAP, INIT_SCALE,
};
pub(crate) use sampling::ranked;
pub use sampling::{sample_sequence, Candidate, SamplingStrategy};

use std::sync::Arc;

/// Frozen copy of the policy taken at the end of Stage 1.
///
/// Only shared read access is exposed, so no update can reach it.
#[derive(Debug, Clone)]
pub struct ReferenceSnapshot(Arc<PolicyParameters>);

impl ReferenceSnapshot {
    pub fn new(params: &PolicyParameters) -> Self {
        Self(Arc::new(params.clone()))
    }

    pub fn params(&self) -> &PolicyParameters {
        &self.0
    }

    /// SHA-256 of the serialised parameters.
    pub fn fingerprint(&self) -> String {
        self.0.fingerprint()
    }
}
