//! Config-driven experiment runner: multi-seed sweeps, aggregation, slope
//! fits, bound overlays and file output.

pub mod bounds;
pub mod config;
pub mod output;
pub mod run;

pub use bounds::TheoreticalBounds;
pub use config::{load_config, ConfigError, ExperimentConfig, LoadedConfig};
pub use output::{emit, validate_summary, RunSummary};
pub use run::{fit_regret_slope, run_experiment, Aggregate, ExperimentResults, SlopeError};
