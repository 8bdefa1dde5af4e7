#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod table;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ExperimentConfig, Overrides};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error(transparent)]
    Core(#[from] madpo_core::Error),
    #[error("{path}: {detail}")]
    Io { path: PathBuf, detail: String },
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.to_path_buf(), detail: e.to_string() }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "madpo", version, about = "Margin-adaptive preference optimization experiments on a synthetic preference world")]
struct Cli {
    /// TOML experiment config; flags override its keys.
    #[arg(long, global = true, env = "MADPO_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "MADPO_OUT")]
    out: Option<PathBuf>,
    /// Comma list and/or half-open ranges, e.g. "0,1,2" or "0..5".
    #[arg(long, global = true, env = "MADPO_SEEDS")]
    seeds: Option<String>,
    #[arg(long, global = true, env = "MADPO_METHODS")]
    methods: Option<String>,
    #[arg(long, global = true, env = "MADPO_TIERS")]
    tiers: Option<String>,
    #[arg(long, global = true, env = "MADPO_PARALLEL")]
    parallel: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the tier datasets and a manifest for every seed.
    Generate,
    /// Train and evaluate every (method, tier, seed) cell.
    Run,
    /// Sensitivity sweeps over the configured grids.
    Sweep {
        /// Also pick the best (tau, c) per tier from a validation split of the training pairs.
        #[arg(long)]
        select: bool,
    },
    /// Run the numerical verification suite.
    Verify {
        #[arg(long)]
        json: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the aggregate table from an earlier run.
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides {
        out: cli.out.clone(),
        seeds: cli.seeds.clone(),
        methods: cli.methods.clone(),
        tiers: cli.tiers.clone(),
        parallel: cli.parallel,
    };
    let result = match &cli.command {
        Command::Verify { json, seed } => commands::verify(*json, *seed),
        cmd => ExperimentConfig::load(cli.config.as_deref(), &overrides).and_then(|cfg| match cmd {
            Command::Generate => commands::generate(&cfg),
            Command::Run => commands::run(&cfg),
            Command::Sweep { select } => commands::sweep(&cfg, *select),
            Command::Report => commands::report(&cfg),
            Command::Verify { .. } => unreachable!(),
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("madpo: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
