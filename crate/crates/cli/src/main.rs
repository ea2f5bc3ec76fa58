use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use satett_cli::{analyze, cmd_analyze, cmd_simulate, cmd_validate, CliError, SimulateOverrides};

#[derive(Parser)]
#[command(name = "satett", version, about = "Subgroup treatment effects in trials with external data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo study and write replication and metrics tables.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Check a CSV dataset against a column schema.
    Validate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: PathBuf,
    },
    /// Estimate subgroup effects on a dataset.
    Analyze {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { config, out_dir, seed, reps } => {
            for path in cmd_simulate(&config, &SimulateOverrides { out_dir, seed, reps })? {
                eprintln!("wrote {}", path.display());
            }
        }
        Command::Validate { data, schema } => {
            let d = cmd_validate(&data, &schema)?;
            println!("ok: {} units ({} trial, {} external), {} covariate(s)", d.n(), d.n_trial(), d.n_external(), d.p());
        }
        Command::Analyze { config } => {
            let report = cmd_analyze(&config)?;
            print!("{}", analyze::report_json(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
