use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lrmc::{CommandError, ExperimentConfig};

/// Online low-rank matrix completion bandit experiments.
#[derive(Parser)]
#[command(name = "lrmc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-round regret of one policy over several seeds.
    Simulate(Common),
    /// Mean regret of several policies across gap values.
    SweepGap(Common),
    /// Mean ETC regret across exploration lengths.
    SweepExplore(Common),
    /// Offline completion of a CSV matrix from noisy samples.
    Complete(Common),
}

#[derive(Args)]
struct Common {
    /// TOML file of flat keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides a key, e.g. `--set horizon=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Base seed; overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
}

fn run(cli: Cli) -> Result<(), CommandError> {
    let (Command::Simulate(c) | Command::SweepGap(c) | Command::SweepExplore(c) | Command::Complete(c)) = &cli.command;
    let mut overrides = c.overrides.clone();
    if let Some(seed) = c.seed {
        overrides.push(format!("seed={seed}"));
    }
    let config = ExperimentConfig::load(c.config.as_deref(), &overrides)?;
    match &cli.command {
        Command::Simulate(_) => lrmc::simulate(&config, &c.out).map(drop),
        Command::SweepGap(_) => lrmc::sweep_gap(&config, &c.out).map(drop),
        Command::SweepExplore(_) => lrmc::sweep_explore(&config, &c.out).map(drop),
        Command::Complete(_) => lrmc::complete(&config, &c.out).map(drop),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
