use std::path::PathBuf;

use crate::config::FieldError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n{}", list(.0))]
    Config(Vec<FieldError>),
    #[error("model error: {0}")]
    Model(#[from] qep_core::Error),
    #[error("cannot write {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("gradient check exceeded its tolerance (max relative error {max_rel_error:.3e} > {tolerance:.1e})")]
    Tolerance { max_rel_error: f64, tolerance: f64 },
}

fn list(errors: &[FieldError]) -> String {
    errors.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n")
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Tolerance { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Model(_) | CliError::Io { .. } => 3,
        }
    }
}

impl From<Vec<FieldError>> for CliError {
    fn from(errors: Vec<FieldError>) -> Self {
        CliError::Config(errors)
    }
}
