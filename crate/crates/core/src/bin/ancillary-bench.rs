use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ancillary_pricing::acceptance::run_acceptance;
use ancillary_pricing::bench::output::read_aggregate_csv;
use ancillary_pricing::bench::{emit, fit_regret_slope, load_config, run_experiment};

const VALIDATION_FAILURE: u8 = 1;
const EPISODE_FAILURE: u8 = 2;
const ACCEPTANCE_FAILURE: u8 = 3;

#[derive(Parser)]
#[command(name = "ancillary-bench", version, about = "Regret benchmarks for focal/ancillary pricing policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (policy, horizon, seed) episode of a config and write results.
    Run {
        config: PathBuf,
        /// Output directory; defaults to the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        /// Also write regret.svg.
        #[arg(long)]
        plots: bool,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// Run the acceptance suite.
    Accept {
        #[arg(long)]
        workers: Option<usize>,
        /// Comma-separated criterion numbers; all when omitted.
        #[arg(long, value_delimiter = ',')]
        only: Vec<usize>,
    },
    /// Fit log-log regret slopes from an aggregate CSV.
    Slope { aggregate: PathBuf },
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run { config, out, workers, plots } => {
            let loaded = match load_config(&config) {
                Ok(l) => l,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(VALIDATION_FAILURE);
                }
            };
            let workers = workers.unwrap_or_else(default_workers);
            log::info!("{}: {workers} workers", loaded.config.name);
            let results = match run_experiment(&loaded, workers) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(EPISODE_FAILURE);
                }
            };
            let out = out.unwrap_or_else(|| loaded.config.output_dir.clone());
            match emit(&results, &out, plots) {
                Ok(files) => log::info!("wrote {} files under {}", files.len(), out.display()),
                Err(e) => {
                    eprintln!("cannot write {}: {e}", out.display());
                    return ExitCode::from(EPISODE_FAILURE);
                }
            }
            for a in &results.aggregates {
                println!(
                    "{:<7} T={:<7} mean regret {:>10.3}  median {:>10.3}  good event {:>5.1}%",
                    a.policy.as_str(),
                    a.horizon,
                    a.mean_regret,
                    a.median_regret,
                    100.0 * a.good_event_rate
                );
            }
            let failures: Vec<_> = results.failures().collect();
            for (key, err) in &failures {
                eprintln!("failed: {} T={} seed={}: {err}", key.policy.as_str(), key.horizon, key.seed);
            }
            if failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EPISODE_FAILURE)
            }
        }
        Command::Validate { config } => match load_config(&config) {
            Ok(l) => {
                println!("{}: ok ({} episodes)", config.display(), l.config.policies.len() * l.config.horizons.len() * l.config.seeds.seeds().len());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(VALIDATION_FAILURE)
            }
        },
        Command::Accept { workers, only } => {
            let results = run_acceptance(workers.unwrap_or_else(default_workers), &only, |r| log::info!("{r}"));
            for r in &results {
                println!("{r}");
            }
            if results.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(ACCEPTANCE_FAILURE)
            }
        }
        Command::Slope { aggregate } => {
            let series = match read_aggregate_csv(&aggregate) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("cannot read {}: {e}", aggregate.display());
                    return ExitCode::from(VALIDATION_FAILURE);
                }
            };
            let mut ok = true;
            for (policy, points) in series {
                match fit_regret_slope(&points) {
                    Ok(s) => println!("{:<7} {s:.4}", policy.as_str()),
                    Err(e) => {
                        ok = false;
                        eprintln!("{:<7} {e}", policy.as_str());
                    }
                }
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(VALIDATION_FAILURE)
            }
        }
    }
}
