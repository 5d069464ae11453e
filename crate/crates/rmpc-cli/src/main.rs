//! Command-line front end for the robust MPC toolkit: certify an invariant
//! set, run a single closed loop, or sweep a Monte Carlo batch.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::json;

use config::{parse_config, CliError};
use rmpc::controller::ControllerVariant;

const CSV_HELP: &str = "\
Output files (all stamped with the config hash):
  certificate.json  vertex-by-vertex feasibility of the invariance check
  trace.csv         step,x0..,u0..,solve_ms  (one row per state)
  run.json          single-run outcome: violations, fuel rate, solve time
  runs.csv          run_id,seed,controller,completed,steps,fuel_rate,violations
  stats.json        per-controller aggregates, Welch comparisons, content hash

Exit status: 0 on success (certify: every vertex passed; simulate: run
completed), 1 on a negative result, 2 on any error.  Errors print a JSON
object to stderr.  The only environment variable read is RMPC_SOLVER_TOL.";

#[derive(Parser)]
#[command(name = "rmpc", version, about = "Robust MPC toolkit", after_long_help = CSV_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_variant(s: &str) -> Result<ControllerVariant, String> {
    match s {
        "nominal" => Ok(ControllerVariant::Nominal),
        "conservative" => Ok(ControllerVariant::Conservative),
        "dependent" => Ok(ControllerVariant::Dependent),
        other => Err(format!(
            "unknown variant {other:?} (expected nominal, conservative, or dependent)"
        )),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check the configured invariant set at every vertex, as given, and
    /// write certificate.json
    Certify {
        /// Run configuration (strict JSON)
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: config's out_dir, else .)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the configured controller variant
        #[arg(long, value_parser = parse_variant)]
        variant: Option<ControllerVariant>,
    },
    /// Run one closed loop and write trace.csv plus run.json
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<ControllerVariant>,
        /// Override the number of steps
        #[arg(long)]
        steps: Option<usize>,
        /// Comma-separated seeds; the first one drives this run
        #[arg(long, value_delimiter = ',')]
        seed_list: Option<Vec<u64>>,
    },
    /// Run every configured controller over a batch of seeded runs and
    /// write runs.csv plus stats.json
    Montecarlo {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Compare only this variant instead of the configured list
        #[arg(long, value_parser = parse_variant)]
        variant: Option<ControllerVariant>,
        /// Number of runs (seeds 0..runs unless seeds are given)
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        /// Comma-separated seeds, one run each
        #[arg(long, value_delimiter = ',')]
        seed_list: Option<Vec<u64>>,
    },
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Certify { config, out, variant } => {
            let cfg = parse_config(&config)?;
            commands::certify(&cfg, out, variant)
        }
        Command::Simulate { config, out, variant, steps, seed_list } => {
            let cfg = parse_config(&config)?;
            commands::simulate(&cfg, out, variant, steps, seed_list)
        }
        Command::Montecarlo { config, out, variant, runs, steps, seed_list } => {
            let cfg = parse_config(&config)?;
            commands::montecarlo(&cfg, out, variant, runs, steps, seed_list)
        }
    }
}

fn error_json(err: &CliError) -> serde_json::Value {
    match err {
        CliError::Io { path, message } => {
            json!({"error": "io", "path": path.display().to_string(), "message": message})
        }
        CliError::Parse(message) => json!({"error": "parse", "message": message}),
        CliError::Validation(messages) => json!({"error": "validation", "messages": messages}),
        CliError::Runtime(message) => json!({"error": "runtime", "message": message}),
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(err) => {
            eprintln!("{}", error_json(&err));
            2
        }
    };
    std::process::exit(code);
}
