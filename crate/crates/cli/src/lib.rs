//! Command-line pipeline: scale and whiten the data, pick the diffusion-maps basis, run the
//! reduced sampler, and write learned realizations with their concentration diagnostics.

pub mod config;
pub mod manifest;
pub mod pipeline;

use clap::{Parser, Subcommand};
use plom::{ErrorKind, PlomError};

use crate::config::{Overrides, RunConfig};
use crate::pipeline::{Command, Run, StageError};

#[derive(Parser, Debug)]
#[command(name = "plom", version, about = "Probabilistic learning on manifolds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Scale, whiten, and fit the kernel density estimate.
    Fit(Overrides),
    /// Also choose the bandwidth and reduced order; writes the spectrum tables.
    Basis(Overrides),
    /// Also run the reduced sampler and write the learned archive.
    Sample(Overrides),
    /// Estimate the concentration distance and write the curves.
    Diagnose(Overrides),
    /// Everything: fit, basis, sample, diagnose.
    Learn(Overrides),
    /// Exact mixture quantities by enumeration, for tiny datasets.
    #[command(hide = true)]
    Oracle(Overrides),
}

impl Cmd {
    fn split(&self) -> (Command, &Overrides) {
        match self {
            Cmd::Fit(o) => (Command::Fit, o),
            Cmd::Basis(o) => (Command::Basis, o),
            Cmd::Sample(o) => (Command::Sample, o),
            Cmd::Diagnose(o) => (Command::Diagnose, o),
            Cmd::Learn(o) => (Command::Learn, o),
            Cmd::Oracle(o) => (Command::Oracle, o),
        }
    }
}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
        ErrorKind::Io => 5,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Setup(#[from] PlomError),
    #[error(transparent)]
    Stage(#[from] StageError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Setup(e) => exit_code(e.kind()),
            CliError::Stage(e) => exit_code(e.source.kind()),
        }
    }
}

/// Runs one subcommand and returns what it prints on success.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let (command, overrides) = cli.command.split();
    let config = RunConfig::load(overrides)?;
    let dir = config.output.clone();
    std::fs::create_dir_all(&dir).map_err(|e| PlomError::Io { path: dir.clone(), source: e })?;
    let run = Run::new(dir, command, config, !overrides.manifest_only);
    let (manifest, result) = run.execute(command);
    let printed = result?;
    Ok(match printed {
        _ if overrides.manifest_only => manifest.to_json(),
        Some(value) => serde_json::to_string_pretty(&value).expect("output serializes"),
        None => format!("{} finished; artifacts in {}", command.name(), manifest.resolved.output.display()),
    })
}
