//! A config-driven sweep: run, write CSV/JSON/SVG output, and fit slopes.
//!
//!     cargo run --release --example regret_sweep -- configs/acceptance.toml out/sweep

use std::path::PathBuf;

use ancillary_pricing::bench::{emit, fit_regret_slope, load_config, run_experiment};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let config = PathBuf::from(args.next().unwrap_or_else(|| "configs/acceptance.toml".into()));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "out/regret_sweep".into()));
    let loaded = load_config(&config)?;
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let results = run_experiment(&loaded, workers)?;
    let files = emit(&results, &out, true)?;
    println!("wrote {} files under {}", files.len(), out.display());
    for policy in &loaded.config.policies {
        let series: Vec<(f64, f64)> = results.series(*policy).into_iter().map(|(t, r)| (t as f64, r)).collect();
        match fit_regret_slope(&series) {
            Ok(s) => println!("{:<7} slope {s:.3}", policy.as_str()),
            Err(e) => println!("{:<7} no slope: {e}", policy.as_str()),
        }
    }
    Ok(())
}
