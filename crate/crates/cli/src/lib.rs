//! The `ultr-lab` experiment pipeline.
//!
//! A run goes through five stages, each a subcommand of the binary and a
//! function here:
//!
//! 1. [`cmd_simulate`] draws a synthetic world, logs it with a confounded
//!    ranking policy and samples position-biased clicks;
//! 2. [`cmd_estimate_policy`] fits the logging-policy estimators;
//! 3. [`cmd_train`] trains the click-model arms;
//! 4. [`cmd_evaluate`] scores every arm on expert-graded test queries;
//! 5. [`cmd_report`] renders the result tables as text.
//!
//! All artifacts live in one run directory alongside a `manifest.json` that
//! hashes every file a stage read or wrote.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{Arm, ExperimentConfig};
pub use error::{CliError, CliResult};
pub use manifest::RunManifest;
pub use pipeline::{cmd_estimate_policy, cmd_evaluate, cmd_simulate, cmd_train};
pub use report::cmd_report;

#[derive(Debug, Parser)]
#[command(name = "ultr-lab", version, about = "Unbiased learning-to-rank experiments on simulated clicks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a world, log it and sample clicks into a new run directory.
    Simulate(StageArgs),
    /// Fit the logging-policy estimators and write table1.csv.
    EstimatePolicy(StageArgs),
    /// Train one arm (`--arm`) or every configured arm.
    Train(StageArgs),
    /// Score the arms on test queries; writes table2.csv and buckets.csv.
    Evaluate(StageArgs),
    /// Print the result tables of a run directory.
    Report(StageArgs),
}

#[derive(Debug, Args)]
pub struct StageArgs {
    /// Experiment config (TOML). Optional for `report` when `--out` is given.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Arm to train; only valid with `train`.
    #[arg(long)]
    pub arm: Option<String>,
    /// Run directory, overriding `output_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace existing stage outputs instead of refusing.
    #[arg(long)]
    pub overwrite: bool,
    /// Master seed, overriding `master_seed` from the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl StageArgs {
    fn load_config(&self) -> CliResult<ExperimentConfig> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| CliError::Config("--config is required".into()))?;
        let mut cfg = ExperimentConfig::load(path)?;
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs one subcommand and returns what it prints on success.
pub fn run(cli: Cli) -> CliResult<String> {
    let (name, args) = match &cli.command {
        Command::Simulate(a) => ("simulate", a),
        Command::EstimatePolicy(a) => ("estimate-policy", a),
        Command::Train(a) => ("train", a),
        Command::Evaluate(a) => ("evaluate", a),
        Command::Report(a) => ("report", a),
    };
    if args.arm.is_some() && name != "train" {
        return Err(CliError::Config(format!("--arm is only accepted by train, not {name}")));
    }
    pipeline::threads_from_env()?;
    match &cli.command {
        Command::Simulate(a) => {
            let cfg = a.load_config()?;
            let dir = cmd_simulate(&cfg, a.overwrite)?;
            Ok(format!("simulated into {}\n", dir.display()))
        }
        Command::EstimatePolicy(a) => {
            let cfg = a.load_config()?;
            cmd_estimate_policy(&cfg, a.overwrite)?;
            Ok(format!("wrote {}\n", cfg.output_dir.join(pipeline::TABLE1_FILE).display()))
        }
        Command::Train(a) => {
            let arm = a.arm.as_deref().map(str::parse::<Arm>).transpose()?;
            let cfg = a.load_config()?;
            let trained = cmd_train(&cfg, arm, a.overwrite)?;
            if trained.is_empty() {
                return Ok("nothing to train\n".into());
            }
            let names: Vec<&str> = trained.iter().map(|a| a.name()).collect();
            Ok(format!("trained {}\n", names.join(", ")))
        }
        Command::Evaluate(a) => {
            let cfg = a.load_config()?;
            cmd_evaluate(&cfg, a.overwrite)?;
            Ok(format!("wrote {}\n", cfg.output_dir.join(pipeline::TABLE2_FILE).display()))
        }
        Command::Report(a) => {
            let dir = match (&a.out, &a.config) {
                (Some(out), _) => out.clone(),
                (None, Some(_)) => a.load_config()?.output_dir,
                (None, None) => return Err(CliError::Config("report needs --out or --config".into())),
            };
            cmd_report(&dir)
        }
    }
}
