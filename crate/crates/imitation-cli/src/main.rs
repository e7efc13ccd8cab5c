use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use imitation_cli::config::{resolve, Overrides};
use imitation_cli::error::CliError;
use imitation_cli::experiments::{boundary_experiment, run_experiment};

/// Few-shot neural-network training by imitating a Gaussian-process
/// reference on optimized pseudo examples.
#[derive(Parser)]
#[command(name = "imitation", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config file (flat `key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in preset to start from: banana-fig2, banana-fig2-fast,
    /// mnist-table1-desk.
    #[arg(long)]
    preset: Option<String>,
    /// Seed(s); repeat the flag for several. Overrides the config list.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Restrict the run to one strategy.
    #[arg(long)]
    strategy: Option<String>,
    /// Restrict the run to one labels-per-class count.
    #[arg(long)]
    labels_per_class: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate; writes runs.csv, aggregate.csv, table1.csv and
    /// per-run reports.
    Run(CommonArgs),
    /// 2-d boundary study; writes reference/target probability grids and
    /// per-step pseudo-example snapshots.
    Boundary(CommonArgs),
    /// Parse and validate a config, echoing every resolved key.
    Validate(CommonArgs),
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            preset: self.preset.clone(),
            seeds: self.seeds.clone(),
            strategy: self.strategy.clone(),
            labels_per_class: self.labels_per_class,
            out_dir: self.out.clone(),
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let cfg = resolve(args.config.as_deref(), &args.overrides())?;
            run_experiment(&cfg)?;
            Ok(())
        }
        Command::Boundary(args) => {
            let cfg = resolve(args.config.as_deref(), &args.overrides())?;
            boundary_experiment(&cfg)?;
            Ok(())
        }
        Command::Validate(args) => {
            let cfg = resolve(args.config.as_deref(), &args.overrides())?;
            for (key, value) in cfg.echo() {
                println!("{key} = {value}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(1))
        }
    }
}
