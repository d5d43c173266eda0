use std::path::PathBuf;
use std::process::ExitCode;

use afdps::metrics::SweepParam;
use afdps::Result;
use afdps_cli::{cmd_oracle, cmd_run, cmd_sweep, load_run_config, parse_values, report_error, resolve_out, SEED_ENV};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "afdps", version, about = "Weighted-particle diffusion posterior sampler")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sampler once and write trace, particles and metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overwrite existing output files.
        #[arg(long)]
        force: bool,
    },
    /// Write the exact posterior at noise level SIGMA.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Repeat runs over a list of values for one parameter (N, eps, eta or K).
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        param: String,
        /// Comma-separated list, e.g. 0,0.5,1
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        force: bool,
    },
}

fn execute(cli: Cli) -> Result<()> {
    let seed = std::env::var(SEED_ENV).ok();
    match cli.command {
        Command::Run { config, out, force } => {
            let cfg = load_run_config(&config, seed.as_deref())?;
            let out = resolve_out(out.as_deref(), &cfg)?;
            cmd_run(&cfg, &out, force)?;
            log::info!("wrote run outputs to {}", out.display());
        }
        Command::Oracle {
            config,
            sigma,
            out,
            force,
        } => {
            let cfg = load_run_config(&config, seed.as_deref())?;
            let out = resolve_out(out.as_deref(), &cfg)?;
            cmd_oracle(&cfg, sigma, &out, force)?;
        }
        Command::Sweep {
            config,
            param,
            values,
            repeats,
            out,
            jobs,
            force,
        } => {
            let cfg = load_run_config(&config, seed.as_deref())?;
            let param: SweepParam = param.parse()?;
            let values = parse_values(&values)?;
            let out = resolve_out(out.as_deref(), &cfg)?;
            let rows = cmd_sweep(&cfg, param, &values, repeats, &out, jobs, force)?;
            log::info!("wrote {} sweep rows to {}", rows.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => ExitCode::from(report_error(&err) as u8),
    }
}
