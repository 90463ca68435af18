//! Command-line front end: fitting, net-survival curves, cohort simulation,
//! simulation studies and AIC comparison, all file based.

pub mod commands;
pub mod config;
pub mod output;

use std::path::Path;

use clap::{Parser, Subcommand};
use thiserror::Error;

use relsurv::data::DataError;
use relsurv::inference::InferenceError;
use relsurv::lifetable::LifeTableError;
use relsurv::netsurv::NetSurvError;
use relsurv::simulation::SimError;

pub use config::{Flags, Settings};

#[derive(Debug, Parser)]
#[command(name = "relsurv", version, about = "Excess-hazard models with frailties for relative survival")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model and write estimates, intervals and AIC.
    Fit(Flags),
    /// Population and subgroup net-survival curves, with Monte-Carlo bands.
    Netsurv(Flags),
    /// Generate one cohort from a scenario.
    Simulate(Flags),
    /// Run a simulation study (performance table or missing-covariate report).
    Bench(Flags),
    /// Rank saved fits by AIC.
    Compare(Flags),
}

pub mod exit {
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    pub const SCHEMA: i32 = 4;
    pub const NOT_CONVERGED: i32 = 5;
    pub const FAILURE: i32 = 1;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    /// Malformed or inconsistent input files.
    #[error("{0}")]
    Schema(String),
    /// The optimiser did not converge or the fit has no usable covariance;
    /// outputs were still written.
    #[error("{0}")]
    NotConverged(String),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Io { .. } => exit::IO,
            CliError::Schema(_) => exit::SCHEMA,
            CliError::NotConverged(_) => exit::NOT_CONVERGED,
            CliError::Failure(_) => exit::FAILURE,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io(source) => CliError::Io {
                path: "dataset".into(),
                source,
            },
            other => CliError::Schema(other.to_string()),
        }
    }
}

impl From<LifeTableError> for CliError {
    fn from(e: LifeTableError) -> Self {
        CliError::Schema(format!("life table: {e}"))
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::SeInvalid => CliError::NotConverged(e.to_string()),
            InferenceError::InvalidLevel(_) | InferenceError::InitLength { .. } => CliError::Usage(e.to_string()),
            other => CliError::Schema(other.to_string()),
        }
    }
}

impl From<NetSurvError> for CliError {
    fn from(e: NetSurvError) -> Self {
        match e {
            NetSurvError::SeInvalid => CliError::NotConverged(e.to_string()),
            NetSurvError::Inference(i) => i.into(),
            NetSurvError::InvalidGrid | NetSurvError::TooFewDraws(_) => CliError::Usage(e.to_string()),
            NetSurvError::TooManyRejections { .. } => CliError::Failure(e.to_string()),
            other => CliError::Schema(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Io(source) => CliError::Io {
                path: "scenario".into(),
                source,
            },
            other => CliError::Schema(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Failure(format!("writing CSV: {e}"))
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(f) => commands::fit(&Settings::resolve(f)?),
        Command::Netsurv(f) => commands::netsurv(&Settings::resolve(f)?),
        Command::Simulate(f) => commands::simulate(&Settings::resolve(f)?),
        Command::Bench(f) => commands::bench(&Settings::resolve(f)?),
        Command::Compare(f) => commands::compare(&Settings::resolve(f)?),
    }
}
