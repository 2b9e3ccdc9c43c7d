//! Parallel episode sweeps and their aggregation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics};
use thiserror::Error;

use super::bounds::TheoreticalBounds;
use super::config::LoadedConfig;
use crate::market_sim::{
    benchmark_for, build_policy, compare_mechanisms, compute_q_star, estimate, focal_purchase_probability,
    gen_feature, run_episode, Benchmark, EpisodeOptions, EpisodeResult, Estimate, MarketInstance, MechanismComparison,
};
use crate::policies::{BenchmarkMode, PolicyKind};

/// Seed of the feature draws used for `q*` and mechanism comparison.
const SUMMARY_SEED: u64 = 0x5EED_0F0A;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EpisodeKey {
    pub policy: PolicyKind,
    pub horizon: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub key: EpisodeKey,
    pub result: Result<EpisodeResult, String>,
}

/// Per-(policy, horizon) statistics of cumulative regret and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub policy: PolicyKind,
    pub horizon: usize,
    pub episodes: usize,
    pub failed: usize,
    pub mean_regret: f64,
    pub median_regret: f64,
    pub q1_regret: f64,
    pub q3_regret: f64,
    pub mean_strategy_regret: f64,
    pub good_event_rate: f64,
    pub switch_rate: f64,
    pub mean_switch_time: Option<f64>,
    pub lcb_violations: usize,
    pub late_mismatch_rate: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResults {
    pub name: String,
    pub benchmark_mode: BenchmarkMode,
    pub benchmark: Benchmark,
    pub q_star: Option<Estimate>,
    pub mechanisms: MechanismComparison,
    pub bounds: TheoreticalBounds,
    pub episodes: Vec<EpisodeOutcome>,
    pub aggregates: Vec<Aggregate>,
}

impl ExperimentResults {
    pub fn failures(&self) -> impl Iterator<Item = (&EpisodeKey, &String)> {
        self.episodes.iter().filter_map(|e| e.result.as_ref().err().map(|m| (&e.key, m)))
    }

    pub fn successes(&self) -> impl Iterator<Item = &EpisodeResult> {
        self.episodes.iter().filter_map(|e| e.result.as_ref().ok())
    }

    /// Mean-regret series of one policy, ordered by horizon.
    pub fn series(&self, policy: PolicyKind) -> Vec<(usize, f64)> {
        self.aggregates.iter().filter(|a| a.policy == policy).map(|a| (a.horizon, a.mean_regret)).collect()
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("summary statistics: {0}")]
    Summary(String),
}

/// `q*` over the feature law, or over the first `n` rows of a fixed sequence.
pub fn q_star_estimate(instance: &MarketInstance, n: usize) -> Result<Estimate, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(SUMMARY_SEED);
    if instance.features.is_iid() {
        return compute_q_star(instance, n, &mut rng).map_err(|e| e.to_string());
    }
    let mut vals = Vec::with_capacity(n);
    for t in 1..=n {
        let x = gen_feature(&instance.features, instance.dim, t, &mut rng).map_err(|e| e.to_string())?;
        vals.push(focal_purchase_probability(instance, &x).map_err(|e| e.to_string())?);
    }
    Ok(estimate(vals.into_iter()))
}

/// Runs every (policy, horizon, seed) triple on a pool of `workers` threads.
/// Results come back in key order regardless of scheduling.
pub fn run_experiment(loaded: &LoadedConfig, workers: usize) -> Result<ExperimentResults, RunError> {
    let cfg = &loaded.config;
    let instance = &loaded.instance;
    let longest = cfg.horizons.iter().copied().max().unwrap_or(1);
    let n_summary = if instance.features.is_iid() { cfg.q_star_samples } else { cfg.q_star_samples.min(longest) };
    let mut rng = ChaCha8Rng::seed_from_u64(SUMMARY_SEED);
    let mechanisms = compare_mechanisms(instance, n_summary, &mut rng).map_err(|e| RunError::Summary(e.to_string()))?;
    let q_star = q_star_estimate(instance, n_summary).ok();
    let benchmark = benchmark_for(cfg.benchmark_mode, Some(mechanisms.best));

    let mut keys = Vec::new();
    for &policy in &cfg.policies {
        for &horizon in &cfg.horizons {
            for seed in cfg.seeds.seeds() {
                keys.push(EpisodeKey { policy, horizon, seed });
            }
        }
    }
    keys.sort();

    let options = EpisodeOptions { keep_records: cfg.record_episodes };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))?;
    let episodes: Vec<EpisodeOutcome> = pool.install(|| {
        keys.par_iter()
            .map(|&key| {
                let result = build_policy(key.policy, instance, key.horizon, cfg.settings, benchmark)
                    .and_then(|mut p| run_episode(instance, p.as_mut(), key.horizon, key.seed, benchmark, options))
                    .map(|mut r| {
                        r.summary.q_star = q_star.map(|q| q.mean);
                        r
                    })
                    .map_err(|e| e.to_string());
                if let Err(e) = &result {
                    log::error!("{} T={} seed={}: {e}", key.policy.as_str(), key.horizon, key.seed);
                }
                EpisodeOutcome { key, result }
            })
            .collect()
    });
    let aggregates = aggregate(&episodes);
    let bounds = TheoreticalBounds {
        dim: instance.dim,
        p_high: instance.price_box.p_high,
        theta_bar: instance.theta_bar,
        lambda: cfg.settings.lambda,
        constants: instance.constants,
        q_star: q_star.map(|q| q.mean),
    };
    Ok(ExperimentResults {
        name: cfg.name.clone(),
        benchmark_mode: cfg.benchmark_mode,
        benchmark,
        q_star,
        mechanisms,
        bounds,
        episodes,
        aggregates,
    })
}

/// Groups outcomes by (policy, horizon); expects them sorted by key.
pub fn aggregate(episodes: &[EpisodeOutcome]) -> Vec<Aggregate> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < episodes.len() {
        let (policy, horizon) = (episodes[i].key.policy, episodes[i].key.horizon);
        let mut j = i;
        while j < episodes.len() && episodes[j].key.policy == policy && episodes[j].key.horizon == horizon {
            j += 1;
        }
        let group = &episodes[i..j];
        let ok: Vec<_> = group.iter().filter_map(|e| e.result.as_ref().ok()).map(|r| &r.summary).collect();
        let n = ok.len().max(1) as f64;
        let regrets: Vec<f64> = ok.iter().map(|s| s.cumulative_regret).collect();
        let mut data = Data::new(regrets.clone());
        let switches: Vec<f64> = ok.iter().filter_map(|s| s.switch_time).map(|t| t as f64).collect();
        let late_window = (horizon / 10).max(1) as f64;
        out.push(Aggregate {
            policy,
            horizon,
            episodes: group.len(),
            failed: group.len() - ok.len(),
            mean_regret: regrets.iter().sum::<f64>() / n,
            median_regret: if ok.is_empty() { f64::NAN } else { data.median() },
            q1_regret: if ok.is_empty() { f64::NAN } else { data.lower_quartile() },
            q3_regret: if ok.is_empty() { f64::NAN } else { data.upper_quartile() },
            mean_strategy_regret: ok.iter().map(|s| s.cumulative_strategy_regret).sum::<f64>() / n,
            good_event_rate: ok.iter().filter(|s| s.good_event_held).count() as f64 / n,
            switch_rate: switches.len() as f64 / n,
            mean_switch_time: (!switches.is_empty()).then(|| switches.iter().sum::<f64>() / switches.len() as f64),
            lcb_violations: ok.iter().map(|s| s.lcb_violations).sum(),
            late_mismatch_rate: ok.iter().map(|s| s.late_mismatches as f64 / late_window).sum::<f64>() / n,
        });
        i = j;
    }
    out
}

#[derive(Debug, Error, PartialEq)]
pub enum SlopeError {
    #[error("need at least 3 points, got {0}")]
    TooFew(usize),
    #[error("regret must be positive, got {regret} at T = {horizon}")]
    Degenerate { horizon: f64, regret: f64 },
}

/// Least-squares slope of `log(regret)` against `log(T)`.
pub fn fit_regret_slope(series: &[(f64, f64)]) -> Result<f64, SlopeError> {
    if series.len() < 3 {
        return Err(SlopeError::TooFew(series.len()));
    }
    if let Some(&(horizon, regret)) = series.iter().find(|(t, r)| !(*r > 0.0) || !(*t > 0.0)) {
        return Err(SlopeError::Degenerate { horizon, regret });
    }
    let n = series.len() as f64;
    let xs: Vec<f64> = series.iter().map(|(t, _)| t.ln()).collect();
    let ys: Vec<f64> = series.iter().map(|(_, r)| r.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Second divided differences of a series over its (possibly uneven) grid;
/// all nonpositive means the piecewise-linear interpolant is concave.
pub fn second_divided_differences(series: &[(f64, f64)]) -> Vec<f64> {
    series
        .windows(3)
        .map(|w| {
            let s1 = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
            let s2 = (w[2].1 - w[1].1) / (w[2].0 - w[1].0);
            (s2 - s1) / (w[2].0 - w[0].0)
        })
        .collect()
}
