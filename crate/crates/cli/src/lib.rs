//! Config-driven experiment runner: `run` trains and writes a bundle,
//! `compare` lines up two bundles, `dynamics` analyses one.

pub mod compare;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod run;

pub use config::{Ablation, ExperimentConfig};
pub use error::{exit, CliError, CliResult};
