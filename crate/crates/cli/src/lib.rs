//! Declarative experiment runner: one TOML config per run, CSV tables with a
//! JSON sidecar as output, named by a hash of the resolved config.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;
pub mod plot;
pub mod run;

use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use iml_core::ImlError;
use thiserror::Error;

pub use config::ExperimentConfig;
pub use run::{run, RunOutput};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    /// Violated admissibility inequality; the message names it.
    #[error("{0}")]
    Admissibility(String),
    #[error(transparent)]
    Core(ImlError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<ImlError> for CliError {
    fn from(e: ImlError) -> Self {
        match e {
            ImlError::Admissibility(m) => CliError::Admissibility(m),
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    /// 2 for admissibility violations, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Admissibility(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subcommand {
    Simulate,
    Moments,
    Constants,
    Rate,
    LdpCheck,
    Stable,
    Plot,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Simulate => "simulate",
            Subcommand::Moments => "moments",
            Subcommand::Constants => "constants",
            Subcommand::Rate => "rate",
            Subcommand::LdpCheck => "ldp-check",
            Subcommand::Stable => "stable",
            Subcommand::Plot => "plot",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "iml", version, about = "Intersection measures of killed Brownian and stable processes")]
pub struct Cli {
    #[arg(value_enum)]
    pub subcommand: Subcommand,
    /// TOML experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}
