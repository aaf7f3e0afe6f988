//! popsim: run, calibrate, compare and sample the shipped microsimulation
//! scenario from declarative TOML configs. All randomness is controlled
//! by the config seed (or --seed), so every output is exactly
//! reproducible.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod manifest;

#[derive(Parser)]
#[command(name = "popsim", version, about = "Deterministic population microsimulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario and write the final population, trackers and a
    /// replay manifest.
    Run {
        /// Scenario config (TOML)
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the initial population size
        #[arg(long)]
        pop_size: Option<usize>,
        /// Override the horizon (steps)
        #[arg(long)]
        horizon: Option<u64>,
        /// Worker threads for the manipulation phase
        #[arg(long)]
        threads: Option<usize>,
        /// Output directory
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Calibrate mortality parameters against a target table.
    Calibrate {
        config: PathBuf,
        /// Target CSV (key,value,weight; scalars keyed *name); defaults to
        /// the config's table or the shipped targets
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long)]
        max_evals: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Counterfactual comparison of named scenarios sharing latent draws.
    Compare {
        config: PathBuf,
        /// Comma-separated list: baseline, industry, advice, config
        #[arg(long, default_value = "baseline,industry,advice")]
        scenarios: String,
        #[arg(long, default_value_t = 1)]
        replications: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        pop_size: Option<usize>,
        #[arg(long)]
        horizon: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Follow-up study: invitation sampling, non-participation,
    /// missingness, and the A/B/C odds-ratio comparison.
    Sample {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        pop_size: Option<usize>,
        #[arg(long)]
        invitees: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            pop_size,
            horizon,
            threads,
            out,
        } => commands::cmd_run(&config, seed, pop_size, horizon, threads, &out),
        Command::Calibrate {
            config,
            target,
            max_evals,
            seed,
            threads,
            out,
        } => commands::cmd_calibrate(&config, target.as_deref(), max_evals, seed, threads, &out),
        Command::Compare {
            config,
            scenarios,
            replications,
            seed,
            pop_size,
            horizon,
            threads,
            out,
        } => commands::cmd_compare(
            &config,
            &scenarios,
            replications,
            seed,
            pop_size,
            horizon,
            threads,
            &out,
        ),
        Command::Sample {
            config,
            seed,
            pop_size,
            invitees,
            threads,
            out,
        } => commands::cmd_sample(&config, seed, pop_size, invitees, threads, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
