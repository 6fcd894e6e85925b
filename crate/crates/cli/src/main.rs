//! `ldp`: batch front door for the two-time-scale diffusion lab.
//!
//! One experiment per invocation, selected by subcommand and configured by a
//! TOML file; outputs are plot-ready CSV/JSON under `--out`. Exit codes:
//! 0 success, 1 config or usage error, 2 assumption-validation failure in
//! strict mode, 3 numerical failure.

mod config;
mod experiments;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use experiments::CliError;

#[derive(Parser)]
#[command(name = "ldp", version, about = "two-time-scale diffusion lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Parser, Debug)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for the experiment's files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Validate the standing assumptions first and refuse to run on failure.
    #[arg(long)]
    strict: bool,
    /// Worker threads for replica-parallel experiments (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the standing assumptions and write the verdicts.
    Validate(RunArgs),
    /// Simulate one trajectory of the slow/fast pair.
    Simulate(RunArgs),
    /// Medians of path/measure deviations over an eps sweep.
    Ergodic(RunArgs),
    /// Evaluate the rate triple of a stored path/measure pair.
    Rate(RunArgs),
    /// Run both duality checks on a stored path/measure pair.
    Legendre(RunArgs),
    /// Estimate a ball probability (crude or tilted).
    Estimate(RunArgs),
    /// Fit the scaling slope across an eps sweep.
    Slope(RunArgs),
    /// Solve the constrained Hamiltonian H(y, x).
    Hxy(RunArgs),
    /// Print an experiment's parameters, defaults, and output schema.
    Describe {
        /// Experiment name.
        name: String,
    },
}

fn run_command(kind: &str, args: &RunArgs) -> Result<String, CliError> {
    if args.threads > 0 {
        // A second invocation in-process would fail; the CLI builds the pool
        // once per run.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(args.threads)
            .build_global();
    }
    let raw = fs::read_to_string(&args.config).map_err(|e| {
        CliError::Usage(format!("cannot read config `{}`: {e}", args.config.display()))
    })?;
    let cfg: RunConfig = toml::from_str(&raw).map_err(|e| CliError::Usage(e.to_string()))?;
    if cfg.experiment.kind_name() != kind {
        return Err(CliError::Usage(format!(
            "subcommand `{kind}` does not match experiment kind `{}` in the config",
            cfg.experiment.kind_name()
        )));
    }
    let outcome = experiments::run(&cfg, &args.out, args.strict)?;
    Ok(outcome.summary)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate(a) => run_command("validate", a),
        Command::Simulate(a) => run_command("simulate", a),
        Command::Ergodic(a) => run_command("ergodic", a),
        Command::Rate(a) => run_command("rate", a),
        Command::Legendre(a) => run_command("legendre", a),
        Command::Estimate(a) => run_command("estimate", a),
        Command::Slope(a) => run_command("slope", a),
        Command::Hxy(a) => run_command("hxy", a),
        Command::Describe { name } => match experiments::describe(name) {
            Some(text) => {
                println!("{text}");
                return ExitCode::SUCCESS;
            }
            None => Err(CliError::Usage(format!("unknown experiment `{name}`"))),
        },
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("ldp: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
