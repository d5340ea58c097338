//! Command-line front end: seeded experiment runs and lambda sweeps.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 on data errors,
//! 1 on anything else. `CFLSIM_WORKERS` overrides the worker-pool size.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cflsim_core::error::Error;
use cflsim_core::harness::{
    render_metrics_csv, render_sweep_csv, run_experiment, summarize_run, sweep, write_run_outputs,
    write_sweep_outputs, ExperimentConfig,
};

#[derive(Parser)]
#[command(name = "cflsim", version, about = "Clustered federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and emit per-round metrics.
    Run {
        /// TOML experiment configuration.
        #[arg(long)]
        config: PathBuf,
        /// Output directory for metrics.csv and metadata.toml.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the lambda x seed cross product and summarize each cell.
    Sweep {
        /// TOML experiment configuration (lambda and master_seed are
        /// overridden per cell).
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated lambda values, e.g. 0,0.1,0.2,0.5.
        #[arg(long, value_delimiter = ',')]
        lambdas: Vec<f64>,
        /// Seed list: comma-separated values and/or inclusive ranges like
        /// 1..10.
        #[arg(long)]
        seeds: String,
        /// Output directory for sweep.csv and metadata.toml.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parse `1..10` (inclusive) and `1,2,5` seed syntax.
fn parse_seeds(text: &str) -> Result<Vec<u64>, Error> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        if let Some((lo, hi)) = part.split_once("..") {
            let lo: u64 = lo
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad seed range start {lo:?}")))?;
            let hi: u64 = hi
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad seed range end {hi:?}")))?;
            if hi < lo {
                return Err(Error::InvalidConfig(format!("empty seed range {part:?}")));
            }
            out.extend(lo..=hi);
        } else {
            let seed: u64 = part
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad seed {part:?}")))?;
            out.push(seed);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidConfig("seed list is empty".into()));
    }
    Ok(out)
}

fn install_worker_pool() {
    if let Ok(value) = std::env::var("CFLSIM_WORKERS") {
        match value.parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("cflsim: ignoring invalid CFLSIM_WORKERS={value:?}"),
        }
    }
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let result = run_experiment(&cfg)?;
            let out_dir = out.or_else(|| cfg.out_dir.clone());
            match out_dir {
                Some(dir) => {
                    write_run_outputs(&cfg, &result, &dir)?;
                    let (rounds, acc) = summarize_run(&result);
                    let reached = rounds.map_or("not reached".to_string(), |r| r.to_string());
                    println!(
                        "run complete: {} rounds, rounds-to-p90 {}, final accuracy {:.4}; wrote {}",
                        result.records.len(),
                        reached,
                        acc,
                        dir.display()
                    );
                }
                None => print!("{}", render_metrics_csv(&cfg, &result)),
            }
            Ok(())
        }
        Command::Sweep {
            config,
            lambdas,
            seeds,
            out,
        } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            if lambdas.is_empty() {
                return Err(Error::InvalidConfig("lambda list is empty".into()));
            }
            let seeds = parse_seeds(&seeds)?;
            let summary = sweep(&cfg, &lambdas, &seeds)?;
            let out_dir = out.or_else(|| cfg.out_dir.clone());
            match out_dir {
                Some(dir) => {
                    write_sweep_outputs(&cfg, &summary, &dir)?;
                    println!(
                        "sweep complete: {} cells over {} lambdas; wrote {}",
                        summary.cells.len(),
                        summary.medians.len(),
                        dir.display()
                    );
                }
                None => print!("{}", render_sweep_csv(&cfg, &summary)),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    install_worker_pool();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cflsim: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else if e.is_data() {
                ExitCode::from(3)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
