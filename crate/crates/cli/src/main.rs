//! `bvi`: run, resume, evaluate and export boosting variational inference
//! experiments described by a JSON spec.

mod commands;
mod error;
mod spec;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "bvi", version, about = "Boosting variational inference experiments")]
struct Cli {
    /// Log progress at info level (warnings are always shown).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment; writes trace.json, mixture.json and checkpoint.json.
    Run { spec: PathBuf },
    /// Continue a run for `extra` more iterations from its checkpoint.
    Resume {
        spec: PathBuf,
        #[arg(long)]
        extra: usize,
        /// Defaults to checkpoint.json in the spec's output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// MC-ELBO and REM of a fitted mixture; writes metrics.json.
    Eval {
        spec: PathBuf,
        #[arg(long)]
        mixture: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compute the spec's reference posterior; writes reference.json.
    Reference { spec: PathBuf },
    /// Export log q on a uniform grid (d ≤ 2) as CSV.
    Grid {
        mixture: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        lower: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        upper: Vec<f64>,
        /// Points per axis.
        #[arg(long)]
        resolution: usize,
        #[arg(long, default_value = "grid.csv")]
        out: PathBuf,
    },
    /// Draw samples from a mixture as CSV.
    Sample {
        mixture: PathBuf,
        #[arg(short)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "samples.csv")]
        out: PathBuf,
    },
    /// Generate a synthetic sensor-network observation file.
    GenSensor {
        #[arg(long, default_value_t = 11)]
        sensors: usize,
        #[arg(long, default_value_t = 0.3)]
        range: f64,
        #[arg(long, default_value_t = 0.02)]
        sigma: f64,
        #[arg(long, default_value_t = 3)]
        min_links: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn dispatch(command: Command) -> Result<String, CliError> {
    match command {
        Command::Run { spec } => commands::cmd_run(&spec),
        Command::Resume { spec, extra, checkpoint } => commands::cmd_resume(&spec, checkpoint, extra),
        Command::Eval { spec, mixture, checkpoint } => commands::cmd_eval(&spec, mixture, checkpoint),
        Command::Reference { spec } => commands::cmd_reference(&spec),
        Command::Grid {
            mixture,
            lower,
            upper,
            resolution,
            out,
        } => commands::cmd_grid(&mixture, &lower, &upper, resolution, &out),
        Command::Sample { mixture, n, seed, out } => commands::cmd_sample(&mixture, n, seed, &out),
        Command::GenSensor {
            sensors,
            range,
            sigma,
            min_links,
            seed,
            out,
        } => commands::cmd_gen_sensor(sensors, range, sigma, min_links, seed, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .format_timestamp(None)
        .init();
    match dispatch(cli.command) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
