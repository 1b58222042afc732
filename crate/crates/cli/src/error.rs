use std::path::PathBuf;

use serde_json::json;

/// Failures of a CLI run, each mapped to its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("cannot parse {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },

    #[error("{key}: {message}")]
    Constraint { key: String, message: String },

    #[error(transparent)]
    Model(rank_sde_core::Error),

    #[error("{0}")]
    Inversion(rank_sde_core::Error),

    #[error("{0}")]
    Analysis(rank_sde_core::Error),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn constraint(key: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Constraint { key: key.into(), message: message.into() }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io { context: context.into(), source }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::MissingFile(_) => "missing_file",
            CliError::Parse { .. } => "parse",
            CliError::Constraint { .. } => "constraint",
            CliError::Model(_) => "model",
            CliError::Inversion(_) => "inversion",
            CliError::Analysis(_) => "analysis",
            CliError::Io { .. } => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingFile(_) => 3,
            CliError::Parse { .. } => 4,
            CliError::Constraint { .. } => 5,
            CliError::Model(_) => 6,
            CliError::Inversion(_) => 7,
            CliError::Analysis(_) => 8,
            CliError::Io { .. } => 9,
        }
    }

    /// Single-line JSON record for stderr.
    pub fn record(&self) -> String {
        let mut rec = json!({
            "error": self.kind(),
            "code": self.exit_code(),
            "message": self.to_string(),
        });
        if let CliError::Constraint { key, .. } = self {
            rec["key"] = json!(key);
        }
        rec.to_string()
    }
}

impl From<rank_sde_core::Error> for CliError {
    fn from(e: rank_sde_core::Error) -> Self {
        use rank_sde_core::Error as E;
        match e {
            E::InversionFailed { .. } => CliError::Inversion(e),
            E::Analysis(_) => CliError::Analysis(e),
            _ => CliError::Model(e),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
