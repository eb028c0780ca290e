//! Cooling-weighted preference optimisation on a desk-scale token policy.
//!
//! The crate is organised along the training pipeline:
//!
//! * [`policy`]: a small causal token model with hand-derived gradients and
//!   exact logit Jacobians.
//! * [`data`]: a checkable synthetic grammar, tiered and on-policy negatives,
//!   preference batches, and the held-out probe set.
//! * [`objectives`]: SFT, constrained SFT, DPO, cooling-weighted DPO and the
//!   label-smoothing / focal baselines, each returning analytic gradients.
//! * [`trainer`]: the two-stage protocol with probes, checkpoints and logs.
//! * [`dynamics`]: one-step influence decomposition through the empirical NTK.
//! * [`diagnostics`]: entropy, TV/JS shift, calibration and curriculum traces.

pub mod data;
pub mod diagnostics;
pub mod dynamics;
mod error;
pub mod gradcheck;
pub mod numeric;
pub mod objectives;
pub mod policy;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
