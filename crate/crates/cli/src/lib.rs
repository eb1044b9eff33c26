//! `assembly` command-line interface: simulate Langevin self-assembly runs,
//! optimize annealing schedules, compare schedules on held-out paths, and
//! verify noise-free convergence.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use assembly_core::Error;
use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "assembly",
    version,
    about = "Langevin self-assembly simulation and annealing-schedule optimization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration file (flat `key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override one configuration key, e.g. `--set system.n=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Cap the rayon worker-thread count (results do not depend on it).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out one trajectory and write trajectory/summary/plot artifacts.
    Simulate(CommonArgs),
    /// Optimize the temperature schedule and evaluate it on held-out paths.
    Optimize(CommonArgs),
    /// Evaluate two schedule sources on shared held-out paths.
    Compare(CommonArgs),
    /// Run the noise-free convergence checks; exit 0 iff all pass.
    Verify(CommonArgs),
}

fn load_config(args: &CommonArgs) -> assembly_core::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read config `{}`: {e}", path.display()))
            })?;
            ExperimentConfig::from_text(&text)?
        }
        None => ExperimentConfig::default(),
    };
    for kv in &args.set {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(key.trim(), value.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn install_thread_pool(threads: Option<usize>) -> assembly_core::Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot configure thread pool: {e}")))?;
    }
    Ok(())
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::InvalidParam(_)
        | Error::Misuse(_)
        | Error::Io(_)
        | Error::Json(_) => 2,
        _ => 1,
    }
}

/// Parse arguments, dispatch, and return the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let (args, cmd): (&CommonArgs, fn(&ExperimentConfig) -> assembly_core::Result<bool>) =
        match &cli.command {
            Command::Simulate(a) => (a, commands::cmd_simulate),
            Command::Optimize(a) => (a, commands::cmd_optimize),
            Command::Compare(a) => (a, commands::cmd_compare),
            Command::Verify(a) => (a, commands::cmd_verify),
        };
    let result = install_thread_pool(args.threads)
        .and_then(|()| load_config(args))
        .and_then(|cfg| cmd(&cfg));
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
