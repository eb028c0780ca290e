//! Failure classes of the command-line tool and their exit codes.

use std::path::PathBuf;

use cwdpo_core::Error as CoreError;

/// Exit codes, as listed in `--help`.
pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const DIVERGENCE: i32 = 4;
    pub const COMPARISON: i32 = 5;
    pub const CAPABILITY: i32 = 6;
    pub const INPUT: i32 = 7;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid arguments: {0}")]
    Usage(String),
    #[error("invalid config {origin}: {detail}")]
    Config { origin: String, detail: String },
    /// Training produced a non-finite loss, gradient or parameter.
    #[error("{0}")]
    Divergence(CoreError),
    #[error("{0}")]
    Comparison(String),
    #[error("{0}")]
    Capability(String),
    #[error("{0}")]
    Input(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Io { .. } => exit::IO,
            Self::Usage(_) => exit::USAGE,
            Self::Config { .. } => exit::CONFIG,
            Self::Divergence(_) => exit::DIVERGENCE,
            Self::Comparison(_) => exit::COMPARISON,
            Self::Capability(_) => exit::CAPABILITY,
            Self::Input(_) => exit::INPUT,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(origin: impl Into<String>, detail: impl Into<String>) -> Self {
        Self::Config {
            origin: origin.into(),
            detail: detail.into(),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(_) | CoreError::Generation(_) => {
                Self::config("values", e.to_string())
            }
            CoreError::Capability(_) => Self::Capability(e.to_string()),
            CoreError::Comparison(_) => Self::Comparison(e.to_string()),
            CoreError::Divergence { .. } => Self::Divergence(e),
            CoreError::Io(source) => Self::Io {
                path: PathBuf::new(),
                source,
            },
            CoreError::Input(_)
            | CoreError::Protocol(_)
            | CoreError::Format { .. }
            | CoreError::Json(_) => Self::Input(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_distinct() {
        let all = [
            CliError::io("x", std::io::Error::other("e")),
            CliError::Usage(String::new()),
            CliError::config("x", "y"),
            CliError::Divergence(CoreError::Divergence {
                stage: 1,
                step: 1,
                detail: String::new(),
                batch: Vec::new(),
            }),
            CliError::Comparison(String::new()),
            CliError::Capability(String::new()),
            CliError::Input(String::new()),
        ];
        let mut codes: Vec<i32> = all.iter().map(CliError::exit_code).collect();
        codes.push(exit::OK);
        let n = codes.len();
        codes.sort_unstable();
        codes.dedup();
        assert_eq!(codes.len(), n);
    }

    #[test]
    fn core_errors_keep_their_class() {
        assert_eq!(
            CliError::from(CoreError::Capability("adam".into())).exit_code(),
            exit::CAPABILITY
        );
        assert_eq!(
            CliError::from(CoreError::Config("lr".into())).exit_code(),
            exit::CONFIG
        );
        assert_eq!(
            CliError::from(CoreError::Input("empty".into())).exit_code(),
            exit::INPUT
        );
    }
}
