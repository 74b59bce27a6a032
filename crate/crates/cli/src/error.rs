//! Failure classes and their exit codes.

use std::fmt::Display;

use ecr_core::ingest::{ConfigError, IngestError};
use ecr_core::mapping::HomographyError;
use ecr_core::pipeline::PipelineError;
use ecr_core::report::ReportError;
use ecr_core::rollup::HierarchyError;
use ecr_core::synthetic::ScenarioError;
use thiserror::Error;

/// Exit codes: 0 ok, 1 internal, 2 input or validation, 3 tolerance.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0:#}")]
    Input(anyhow::Error),
    #[error("{0:#}")]
    Tolerance(anyhow::Error),
    #[error("{0:#}")]
    Internal(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Internal(_) => 1,
            CliError::Input(_) => 2,
            CliError::Tolerance(_) => 3,
        }
    }

    pub fn input(msg: impl Display) -> Self {
        CliError::Input(anyhow::anyhow!("{msg}"))
    }

    /// Prefix the message with `context`, keeping the class.
    pub fn context(self, context: impl Display) -> Self {
        match self {
            CliError::Input(e) => CliError::Input(e.context(context.to_string())),
            CliError::Tolerance(e) => CliError::Tolerance(e.context(context.to_string())),
            CliError::Internal(e) => CliError::Internal(e.context(context.to_string())),
        }
    }
}

impl From<HomographyError> for CliError {
    fn from(e: HomographyError) -> Self {
        match e {
            HomographyError::ToleranceExceeded { .. } => CliError::Tolerance(e.into()),
            _ => CliError::Input(e.into()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Input(e.into())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Input(e.into())
    }
}

impl From<HierarchyError> for CliError {
    fn from(e: HierarchyError) -> Self {
        CliError::Input(e.into())
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Homography(h) => h.into(),
            ScenarioError::Gaze(_) => CliError::Internal(e.into()),
            _ => CliError::Input(e.into()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Calibration(h) => h.into(),
            PipelineError::Gaze(_) => CliError::Internal(e.into()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Internal(e.into())
    }
}

/// Classify plain I/O and serialization failures.
pub trait ResultExt<T> {
    /// Failure caused by a bad or missing input.
    fn input_err(self, what: impl Display) -> Result<T, CliError>;
    /// Failure while producing output.
    fn internal_err(self, what: impl Display) -> Result<T, CliError>;
}

impl<T, E> ResultExt<T> for Result<T, E>
where
    E: std::error::Error + Send + Sync + 'static,
{
    fn input_err(self, what: impl Display) -> Result<T, CliError> {
        self.map_err(|e| CliError::Input(anyhow::Error::new(e).context(what.to_string())))
    }

    fn internal_err(self, what: impl Display) -> Result<T, CliError> {
        self.map_err(|e| CliError::Internal(anyhow::Error::new(e).context(what.to_string())))
    }
}
