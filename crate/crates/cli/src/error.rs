use std::path::{Path, PathBuf};

use serde_json::json;

use crate::config::SweepSpec;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config key `{parameter}`: {message}")]
    Config { parameter: String, message: String },

    #[error("cannot parse experiment file: {0}")]
    Parse(String),

    #[error(transparent)]
    Model(#[from] wpbc::Error),

    #[error("at sweep point {point}: {source}")]
    AtPoint { point: String, source: wpbc::Error },

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn config(parameter: &str, message: impl Into<String>) -> Self {
        Self::Config {
            parameter: parameter.to_string(),
            message: message.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn at_point(sweep: &SweepSpec, point: &[f64], source: wpbc::Error) -> Self {
        let point = sweep
            .axes
            .iter()
            .zip(point)
            .map(|(a, v)| format!("{}={v}", a.param.key()))
            .collect::<Vec<_>>()
            .join(", ");
        Self::AtPoint { point, source }
    }

    fn model_error(&self) -> Option<&wpbc::Error> {
        match self {
            CliError::Model(e) | CliError::AtPoint { source: e, .. } => Some(e),
            _ => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "invalid_config",
            CliError::Parse(_) => "parse_error",
            CliError::Model(e) | CliError::AtPoint { source: e, .. } => e.kind(),
            CliError::Io { .. } | CliError::Csv(_) => "io_error",
            CliError::Json(_) => "manifest_error",
        }
    }

    /// Offending parameter or key, when there is one.
    pub fn parameter(&self) -> Option<&str> {
        match self {
            CliError::Config { parameter, .. } => Some(parameter),
            _ => match self.model_error() {
                Some(wpbc::Error::InvalidParameter { name, .. }) => Some(name),
                _ => None,
            },
        }
    }

    /// Process exit status: 2 for bad input, 3 for numerical failure, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Parse(_) => 2,
            _ => match self.model_error() {
                Some(wpbc::Error::InvalidParameter { .. }) => 2,
                Some(wpbc::Error::QuadratureNonConvergence { .. }) => 3,
                None => 1,
            },
        }
    }

    /// Machine-readable error record.
    pub fn record(&self) -> serde_json::Value {
        json!({
            "error": {
                "kind": self.kind(),
                "parameter": self.parameter(),
                "message": self.to_string(),
            }
        })
    }
}
