use std::path::PathBuf;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed caller input: out-of-vocabulary tokens, empty sequences,
    /// mismatched distributions.
    #[error("input error: {0}")]
    Input(String),
    /// Invalid configuration values.
    #[error("config error: {0}")]
    Config(String),
    /// The requested operation is not available for this model or run.
    #[error("capability error: {0}")]
    Capability(String),
    /// A negative of the requested tier cannot be produced.
    #[error("generation error: {0}")]
    Generation(String),
    /// Training protocol steps called out of order.
    #[error("protocol error: {0}")]
    Protocol(String),
    /// Non-finite loss during training.
    #[error("divergence at stage {stage} step {step}: {detail}")]
    Divergence {
        stage: u8,
        step: usize,
        detail: String,
        /// Offending batch, one JSON record per line, for replay.
        batch: Vec<String>,
    },
    /// Two run bundles cannot be compared.
    #[error("comparison error: {0}")]
    Comparison(String),
    /// Corrupt or unrecognised file contents.
    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
