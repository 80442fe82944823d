use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mirror_mcmc_experiments::config::{Experiment, Preset};
use mirror_mcmc_experiments::synth::{write_synthetic, Dataset};
use mirror_mcmc_experiments::{resolve, run_experiment, Overrides, Result};

#[derive(Parser)]
#[command(name = "mirror-mcmc", version, about = "Mirror-type MCMC experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its CSV/JSON outputs.
    Run(RunArgs),
    /// Write a synthetic data set shaped like a study input.
    Synth(SynthArgs),
    /// Print the fully resolved configuration as TOML without running.
    Config(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file; flags and --set take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    experiment: Option<Experiment>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    threads: Option<usize>,
    /// Override one configuration key, e.g. `--set iterations=20000`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(value_enum)]
    dataset: Dataset,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Observations (logistic) or subjects (GLMM tables).
    #[arg(long, default_value_t = 1000)]
    rows: usize,
    /// Predictors (logistic) or visits per subject (GLMM tables).
    #[arg(long, default_value_t = 4)]
    cols: usize,
}

impl From<RunArgs> for Overrides {
    fn from(a: RunArgs) -> Self {
        Overrides {
            config: a.config,
            experiment: a.experiment,
            preset: a.preset,
            seed: a.seed,
            out: a.out,
            replicates: a.replicates,
            threads: a.threads,
            set: a.set,
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = resolve(&args.into())?;
            let report = run_experiment(&cfg)?;
            println!(
                "{}: {} rows, {} summary cells written to {}",
                cfg.experiment.name(),
                report.rows.len(),
                report.summary.len(),
                report.out.display()
            );
        }
        Command::Config(args) => print!("{}", resolve(&args.into())?.to_toml()),
        Command::Synth(a) => {
            write_synthetic(a.dataset, &a.out, a.rows, a.cols, a.seed)?;
            println!("wrote {}", a.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
