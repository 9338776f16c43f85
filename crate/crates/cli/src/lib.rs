//! Library side of the `vlsero` command-line tool: config loading, run
//! manifests and the subcommand implementations.

pub mod commands;
pub mod config;
pub mod manifest;

use thiserror::Error;
use vlsero::cv::CvError;
use vlsero::data::DataError;
use vlsero::likelihood::LikelihoodError;
use vlsero::posterior::PosteriorError;
use vlsero::sampler::SamplerError;
use vlsero::simulate::SimError;

pub const EXIT_OK: u8 = 0;
pub const EXIT_OTHER: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad config, malformed or inconsistent input data.
    #[error("{0}")]
    Validation(String),
    /// Non-finite initialisation, exhausted rejection sampling, or results
    /// that fail to reproduce.
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Io(_) | CliError::Other(_) => EXIT_OTHER,
        }
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<LikelihoodError> for CliError {
    fn from(e: LikelihoodError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Rejection { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::NonFiniteInit { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<PosteriorError> for CliError {
    fn from(e: PosteriorError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<CvError> for CliError {
    fn from(e: CvError) -> Self {
        let msg = e.to_string();
        match e {
            CvError::Sampler { source, .. } => match CliError::from(source) {
                CliError::Numeric(_) => CliError::Numeric(msg),
                _ => CliError::Validation(msg),
            },
            CvError::MaskLeak { .. } => CliError::Other(msg),
            _ => CliError::Validation(msg),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(format!("json: {e}"))
    }
}
