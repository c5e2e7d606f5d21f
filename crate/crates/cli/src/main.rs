//! Command-line front end: generate populations, run single estimates,
//! and execute replicated scenario grids.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::Ordering;

use clap::{Parser, Subcommand};

use commands::{cmd_estimate, cmd_generate, cmd_simulate, INTERRUPTED};
use config::Config;

/// Exit codes: 0 success, 1 usage or config error, 2 I/O error,
/// 3 statistical failure, 130 interrupted.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Stat(String),
    Interrupted,
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Stat(_) => 3,
            CliError::Interrupted => 130,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Stat(m) => m,
            CliError::Interrupted => "interrupted",
        }
    }
}

#[derive(Parser)]
#[command(
    name = "ppscluster",
    about = "Finite-population inference under two-stage PPS cluster sampling",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a cluster-size frame and a synthetic population.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides out_dir in the config).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Draw one sample from an exported population and run one estimator.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        /// Population export produced by `generate`.
        #[arg(long)]
        population: PathBuf,
        /// negbin | lognormal | bb | hajek | greg | cluster_inds | knowsizes
        #[arg(long)]
        method: String,
        /// Replicate index for the sampling stream.
        #[arg(long, default_value_t = 0)]
        sample_seed: u64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Write the retained draws (chain, iter, parameter, value).
        #[arg(long)]
        dump_draws: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the scenario grid and write report.csv / figure_data.csv.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Comma-separated method list (overrides the config).
        #[arg(long)]
        methods: Option<String>,
        /// Worker threads for replicate parallelism.
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

extern "C" fn on_sigint(_: libc::c_int) {
    INTERRUPTED.store(true, Ordering::SeqCst);
}

fn install_sigint_handler() {
    unsafe {
        libc::signal(libc::SIGINT, on_sigint as *const () as libc::sighandler_t);
    }
}

fn load_config(path: &PathBuf, seed_override: Option<u64>) -> Result<Config, CliError> {
    let mut cfg = Config::load(path)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate { config, out_dir, seed } => {
            let cfg = load_config(&config, seed)?;
            let dir = out_dir
                .or_else(|| cfg.out_dir.clone())
                .ok_or_else(|| CliError::Usage("--out-dir or out_dir required".into()))?;
            cmd_generate(&cfg, &dir)
        }
        Command::Estimate { config, population, method, sample_seed, out_dir, dump_draws, seed } => {
            let cfg = load_config(&config, seed)?;
            let dir = out_dir.or_else(|| cfg.out_dir.clone());
            cmd_estimate(&cfg, &population, &method, sample_seed, dir.as_deref(), dump_draws.as_deref())
        }
        Command::Simulate { config, out_dir, methods, workers, seed } => {
            install_sigint_handler();
            if let Some(n) = workers {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .map_err(|e| CliError::Usage(format!("workers: {e}")))?;
            }
            let cfg = load_config(&config, seed)?;
            let dir = out_dir
                .or_else(|| cfg.out_dir.clone())
                .ok_or_else(|| CliError::Usage("--out-dir or out_dir required".into()))?;
            cmd_simulate(&cfg, &dir, methods.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
