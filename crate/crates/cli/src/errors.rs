//! CLI error type and exit-code mapping.
//!
//! Exit codes: 0 success, 2 usage (bad flags or config), 3 input
//! (missing or malformed files, unalignable examples), 4 numerical
//! (NaN/Inf or log-domain failures during computation).

use rationale_core::attribution::AttributionError;
use rationale_core::autodiff::DiffError;
use rationale_core::data::DataError;
use rationale_core::model::ModelError;
use rationale_core::pipeline::PipelineError;
use rationale_core::rationale::RationaleError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Input(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    /// Attach context (usually the file or example being processed) to
    /// an error from the core library, classifying it by exit code.
    pub fn from_model(err: ModelError, context: &str) -> CliError {
        match &err {
            ModelError::Diff(diff) if is_numerical(diff) => {
                CliError::Numerical(format!("{context}: {err}"))
            }
            _ => CliError::Input(format!("{context}: {err}")),
        }
    }

    pub fn from_data(err: DataError, context: &str) -> CliError {
        CliError::Input(format!("{context}: {err}"))
    }

    pub fn from_pipeline(err: PipelineError, context: &str) -> CliError {
        match err {
            PipelineError::Model(m) => CliError::from_model(m, context),
            PipelineError::Attribution(AttributionError::Model(m)) => {
                CliError::from_model(m, context)
            }
            PipelineError::Rationale(RationaleError::Model(m)) => CliError::from_model(m, context),
            other => CliError::Input(format!("{context}: {other}")),
        }
    }
}

fn is_numerical(err: &DiffError) -> bool {
    matches!(err, DiffError::NonFinite { .. } | DiffError::LogDomain { .. })
}
