use std::path::Path;

use thiserror::Error;

use domex_core::checkpoint::CheckpointError;
use domex_core::dom::IngestError;
use domex_core::node_model::NodeModelError;
use domex_core::pipeline::{ConfigError, ExperimentError, MetricsError};
use domex_core::relation::RelationError;

/// Exit 2 for usage errors, 3 for bad data, 4 for numeric failures.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

fn node_error(e: NodeModelError) -> CliError {
    match e {
        NodeModelError::Nn(e) => CliError::Numeric(e.to_string()),
        NodeModelError::InvalidConfig(_) => CliError::Usage(e.to_string()),
        other => CliError::Data(other.to_string()),
    }
}

fn relation_error(e: RelationError) -> CliError {
    match e {
        RelationError::Nn(e) => CliError::Numeric(e.to_string()),
        RelationError::InvalidConfig(_) => CliError::Usage(e.to_string()),
        other => CliError::Data(other.to_string()),
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Invalid(_) | ConfigError::MissingSchema => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Node(e) => node_error(e),
            CheckpointError::Relation(e) => relation_error(e),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Nn(e) => CliError::Numeric(e.to_string()),
            ExperimentError::Node(e) => node_error(e),
            ExperimentError::Relation(e) => relation_error(e),
            ExperimentError::Invalid(_) | ExperimentError::InsufficientSites { .. } => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}
