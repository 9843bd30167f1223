use std::path::PathBuf;

use thiserror::Error;

/// One offending configuration key together with the constraint it broke.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub key: String,
    pub expected: String,
    pub found: String,
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: expected {}, found {}",
            self.key, self.expected, self.found
        )
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("HOMF format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("fit did not converge after {iterations} iterations (best residual norm {best_residual:.6e})")]
    Fit {
        iterations: usize,
        best_residual: f64,
    },

    #[error("invalid configuration:\n{}", format_issues(.0))]
    Config(Vec<ConfigIssue>),

    #[error("config parse error: {0}")]
    ConfigSyntax(String),

    #[error("missing reference run: {0}")]
    MissingReference(String),

    #[error("scan point {index} failed: {source}")]
    ScanPoint {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

fn format_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  - {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
