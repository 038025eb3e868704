//! Experiment driver for `hypomhd`: configuration, subcommands and
//! artifact output.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use config::{parse_config, ExperimentConfig};
use error::CliError;
use output::OutputDir;

#[derive(Debug, Parser)]
#[command(name = "hypomhd", version, about = "Hypoellipticity and ergodicity experiments for stochastic 2D MHD")]
pub struct Cli {
    /// Worker threads for ensembles and matrix assembly.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Shorthand for `--set run.seed=N`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override a config value, e.g. `--set equation.alpha=2.0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bracket identities against quadrature.
    Bracket {
        #[command(subcommand)]
        action: BracketAction,
    },
    /// Generation coverage of the forced wavevectors.
    Reach(Common),
    /// One trajectory.
    Simulate(Common),
    /// Malliavin matrices and cone statistics over seeded paths.
    Malliavin(Common),
    /// Time average of an observable.
    Lln(Common),
    /// Normalized time integrals over replicas.
    Clt(Common),
    /// Decay of an observable difference between two ensembles.
    Mix(Common),
    /// Exponential-moment statistic.
    Moment(Common),
}

#[derive(Debug, Subcommand)]
pub enum BracketAction {
    Verify {
        #[arg(long)]
        kmax: Option<u32>,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Bracket { .. } => "bracket",
            Command::Reach(_) => "reach",
            Command::Simulate(_) => "simulate",
            Command::Malliavin(_) => "malliavin",
            Command::Lln(_) => "lln",
            Command::Clt(_) => "clt",
            Command::Mix(_) => "mix",
            Command::Moment(_) => "moment",
        }
    }
}

fn load(common: &Common) -> Result<Option<ExperimentConfig>, CliError> {
    let Some(path) = &common.config else {
        return Ok(None);
    };
    let mut overrides = common.overrides.clone();
    if let Some(s) = common.seed {
        overrides.push(format!("run.seed={s}"));
    }
    parse_config(path, &overrides).map(Some)
}

fn require(cfg: Option<ExperimentConfig>, cmd: &str) -> Result<ExperimentConfig, CliError> {
    cfg.ok_or_else(|| CliError::Usage(format!("`{cmd}` needs --config")))
}

/// Run one subcommand, writing outputs and the manifest into `--out`.
pub fn dispatch(command: &Command) -> Result<serde_json::Value, CliError> {
    let name = command.name();
    let (common, kmax) = match command {
        Command::Bracket { action: BracketAction::Verify { kmax, common } } => (common, *kmax),
        Command::Reach(c)
        | Command::Simulate(c)
        | Command::Malliavin(c)
        | Command::Lln(c)
        | Command::Clt(c)
        | Command::Mix(c)
        | Command::Moment(c) => (c, None),
    };
    let cfg = load(common)?;
    if let Some(c) = &cfg {
        if c.seed().is_none() && !matches!(command, Command::Bracket { .. } | Command::Reach(_)) {
            return Err(CliError::SeedRequired(name.to_string()));
        }
    }
    let mut out = OutputDir::create(&common.out)?;
    let value = match command {
        Command::Bracket { .. } => {
            let k = kmax.or(cfg.as_ref().map(|c| c.raw.analysis.bracket.kmax)).unwrap_or(3);
            commands::bracket_verify(k, cfg.as_ref(), &mut out)?
        }
        Command::Reach(_) => commands::reach(&require(cfg.clone(), name)?, &mut out)?,
        Command::Simulate(_) => commands::simulate_cmd(&require(cfg.clone(), name)?, &mut out)?,
        Command::Malliavin(_) => commands::malliavin(&require(cfg.clone(), name)?, &mut out)?,
        Command::Lln(_) => commands::lln(&require(cfg.clone(), name)?, &mut out)?,
        Command::Clt(_) => commands::clt(&require(cfg.clone(), name)?, &mut out)?,
        Command::Mix(_) => commands::mix(&require(cfg.clone(), name)?, &mut out)?,
        Command::Moment(_) => commands::moment(&require(cfg.clone(), name)?, &mut out)?,
    };
    let echo = cfg.as_ref().map(|c| c.echo()).unwrap_or(serde_json::Value::Null);
    out.finish(name, echo, cfg.as_ref().and_then(|c| c.seed()))?;
    Ok(value)
}

/// Parse arguments, size the thread pool and dispatch.
pub fn run(args: impl IntoIterator<Item = String>) -> Result<serde_json::Value, CliError> {
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    match cli.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(e.to_string()))?;
            pool.install(|| dispatch(&cli.command))
        }
        None => dispatch(&cli.command),
    }
}

/// Files written by a run, manifest excluded.
pub fn artifacts(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().is_some_and(|n| n != output::MANIFEST))
        .collect();
    files.sort();
    Ok(files)
}
