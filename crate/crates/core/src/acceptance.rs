//! The acceptance suite: twelve property and scaling checks on fixed seeds.
//!
//! Radius scales were calibrated on pilot seeds 10000 and up, as roughly 1.2
//! times the largest `||theta_hat - theta*||_Sigma / beta` seen at T = 2000
//! with unscaled radii. Acceptance seeds start at 0 and never overlap them.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::bench::config::{validate, ExperimentConfig};
use crate::bench::output::aggregate_csv_bytes;
use crate::bench::run::{fit_regret_slope, run_experiment, second_divided_differences};
use crate::bench::LoadedConfig;
use crate::market_sim::{
    build_policy, compare_mechanisms, gen_feature, run_episode, Benchmark, BundleShock, EpisodeOptions,
    EpisodeSummary, FeatureSource, MarketInstance, CONSTANTS_GRID,
};
use crate::mle::{EstimatorState, ProductTag};
use crate::policies::{PolicyKind, PolicySettings};
use crate::pricing_oracle::{
    expected_revenue_unbundled, focal_price_unconstrained, g_domain, g_fn, optimal_revenue_single, optimal_revenue_unbundled, PriceBox, Strategy,
};
use crate::shock_dist::{compute_constants, ShockConstants, ShockDistribution};

pub const STANDARD_RADIUS_SCALE: f64 = 0.03;
pub const MIXED_RADIUS_SCALE: f64 = 0.006;
pub const BUNDLE_DOMINANT_RADIUS_SCALE: f64 = 0.01;

/// Determinism config, embedded so the suite runs from any directory.
pub const ACCEPTANCE_CONFIG: &str = include_str!("../configs/acceptance.toml");

const SLOPE_LIMIT: f64 = 0.65;
const SCALING_HORIZONS: [usize; 3] = [1_000, 10_000, 100_000];
const SCALING_SEEDS: u64 = 20;
const COVERAGE_SEEDS: u64 = 200;
const COVERAGE_HORIZON: usize = 2_000;
const STRATEGY_HORIZON: usize = 20_000;
const SWITCH_SEEDS: u64 = 50;

fn uniform(lo: f64, hi: f64) -> ShockDistribution {
    ShockDistribution::uniform(lo, hi).expect("valid uniform")
}

fn price_box() -> PriceBox {
    PriceBox::new(0.1, 1.0).expect("valid box")
}

/// d = 2, Uniform(-2, 2) shocks for all three products, theta_bar = 0.5,
/// box [0.1, 1]. Unbundling is optimal for every feature.
pub fn standard_instance(features: FeatureSource) -> MarketInstance {
    MarketInstance::new(
        vec![0.3, -0.2],
        vec![0.1, 0.25],
        uniform(-2.0, 2.0),
        uniform(-2.0, 2.0),
        BundleShock::Explicit(uniform(-2.0, 2.0)),
        price_box(),
        0.5,
        features,
    )
    .expect("standard instance is valid")
}

/// d = 1 with a Normal(0.8, 1) bundle shock: the per-customer optimum is
/// bundling for roughly half of the unit ball.
pub fn mixed_instance() -> MarketInstance {
    MarketInstance::new(
        vec![0.5],
        vec![0.5],
        uniform(-2.5, 2.5),
        uniform(-2.5, 2.5),
        BundleShock::Explicit(ShockDistribution::normal(0.8, 1.0).expect("valid normal")),
        price_box(),
        1.0,
        FeatureSource::IidUnitBall,
    )
    .expect("mixed instance is valid")
}

/// The standard instance with a Normal(2, 1.5) bundle shock, which makes
/// bundling better at every feature by about 0.43 on average.
pub fn bundle_dominant_instance() -> MarketInstance {
    MarketInstance::new(
        vec![0.3, -0.2],
        vec![0.1, 0.25],
        uniform(-2.0, 2.0),
        uniform(-2.0, 2.0),
        BundleShock::Explicit(ShockDistribution::normal(2.0, 1.5).expect("valid normal")),
        price_box(),
        0.5,
        FeatureSource::IidUnitBall,
    )
    .expect("bundle-dominant instance is valid")
}

/// A 2-d feature stream built to defeat the learner: the norm grows as
/// `sqrt(t / n)`, so early periods carry almost no information, and the
/// direction turns a quarter circle per decade, so new periods keep
/// pointing where the design matrix is thin.
pub fn adversarial_features(n: usize) -> Vec<Vec<f64>> {
    (1..=n)
        .map(|t| {
            let r = (t as f64 / n as f64).sqrt();
            let phi = std::f64::consts::FRAC_PI_2 * (t as f64).log10();
            vec![r * phi.cos(), r * phi.sin()]
        })
        .collect()
}

pub fn adversarial_source(n: usize) -> FeatureSource {
    FeatureSource::FixedSequence { path: PathBuf::from("<adversarial>"), rows: Arc::new(adversarial_features(n)) }
}

#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: usize,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} {} {}: {} [{:.1?}]",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.title,
            self.detail,
            self.elapsed
        )
    }
}

fn random_dist(rng: &mut ChaCha8Rng) -> ShockDistribution {
    // Ranges keep a 1e-6 tail window under 10 wide, so a 1e5 grid has spacing
    // below 1e-4; they also keep |v| <= 1.5 inside every support.
    match rng.gen_range(0..3) {
        0 => uniform(rng.gen_range(-3.0..-1.8), rng.gen_range(1.8..3.0)),
        1 => ShockDistribution::normal(rng.gen_range(-0.5..0.5), rng.gen_range(0.5..1.0)).expect("valid normal"),
        _ => ShockDistribution::logistic(rng.gen_range(-0.5..0.5), rng.gen_range(0.2..0.35)).expect("valid logistic"),
    }
}

/// Grid argmax of `p (1 - F(p - v))` over the window where the shock's
/// survival function is between 1e-6 and 1 - 1e-6.
fn grid_search(dist: &ShockDistribution, v: f64, n: usize) -> (f64, f64) {
    let lo = (v + dist.quantile(1e-6)).max(0.0);
    let hi = v + dist.quantile(1.0 - 1e-6);
    let mut best = (lo, f64::NEG_INFINITY);
    for i in 0..n {
        let p = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        let r = p * dist.sf(p - v);
        if r > best.1 {
            best = (p, r);
        }
    }
    best
}

fn oracle_equivalence() -> Result<(bool, String), String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut dp, mut dr) = (0f64, 0f64);
    for _ in 0..100 {
        let dist = random_dist(&mut rng);
        let v = rng.gen_range(-1.0..1.0);
        let p = g_fn(&dist, v).map_err(|e| e.to_string())?;
        let r = optimal_revenue_single(&dist, v).map_err(|e| e.to_string())?;
        let (gp, gr) = grid_search(&dist, v, 100_000);
        dp = dp.max((p - gp).abs());
        dr = dr.max((r - gr).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        dp <= 1e-4 && dr <= 1e-6 && secs < 10.0,
        format!("max price gap {dp:.2e} (<= 1e-4), max revenue gap {dr:.2e} (<= 1e-6), {secs:.2} s (< 10 s)"),
    ))
}

fn g_slope() -> Result<(bool, String), String> {
    let laws = [
        ("uniform", uniform(-2.0, 2.0)),
        ("normal", ShockDistribution::normal(0.0, 1.0).expect("valid normal")),
        ("logistic", ShockDistribution::logistic(0.0, 0.5).expect("valid logistic")),
    ];
    let h = 1e-4;
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, dist) in &laws {
        let (dlo, dhi) = g_domain(dist);
        let (lo, hi) = ((-1.5f64).max(dlo + 1e-3), 1.5f64.min(dhi - 1e-3 - h));
        let (mut smin, mut smax) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..1000 {
            let v = lo + (hi - lo) * i as f64 / 999.0;
            let s = (g_fn(dist, v + h).map_err(|e| e.to_string())? - g_fn(dist, v).map_err(|e| e.to_string())?) / h;
            smin = smin.min(s);
            smax = smax.max(s);
        }
        ok &= smin > 1e-6 && smax < 1.0 - 1e-6;
        parts.push(format!("{name} slope in [{smin:.4}, {smax:.4}]"));
    }
    Ok((ok, parts.join(", ")))
}

fn revenue_lemmas() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pool: Vec<(ShockDistribution, ShockConstants)> = (0..12)
        .map(|_| {
            let d = random_dist(&mut rng);
            let c = compute_constants(&d, 0.1, 1.0, 0.5, CONSTANTS_GRID).map_err(|e| e.to_string())?;
            Ok((d, c))
        })
        .collect::<Result<_, String>>()?;
    let e = |r: Result<f64, crate::pricing_oracle::PricingError>| r.map_err(|e| e.to_string());
    let slack = 1e-9;
    let mut violations = [0usize; 4];
    for _ in 0..10_000 {
        let (df, cf) = &pool[rng.gen_range(0..pool.len())];
        let (da, ca) = &pool[rng.gen_range(0..pool.len())];
        let mut v = || rng.gen_range(-1.5..1.5);
        let (v1, v2, v3, v4) = (v(), v(), v(), v());
        if (e(optimal_revenue_single(df, v1))? - e(optimal_revenue_single(df, v2))?).abs() > (v1 - v2).abs() + slack {
            violations[0] += 1;
        }
        if (e(g_fn(da, v1))? - e(g_fn(da, v2))?).abs() > (v1 - v2).abs() + slack {
            violations[1] += 1;
        }
        let (r1, r2) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let gap = (e(focal_price_unconstrained(df, v1, r1))? - e(focal_price_unconstrained(df, v2, r2))?).abs();
        if gap > (v1 - v2).abs() + 2.0 * (r1 - r2).abs() + slack {
            violations[2] += 1;
        }
        // Truth (v1, v3), estimates (v2, v4).
        let eta = ShockConstants::combine(&[*cf, *ca], 1.0).eta;
        let best = e(optimal_revenue_unbundled(df, da, v1, v3))?;
        let p_a = e(g_fn(da, v4))?;
        let p_f = e(focal_price_unconstrained(df, v2, e(optimal_revenue_single(da, v4))?))?;
        let loss = best - expected_revenue_unbundled(df, da, p_f, p_a, v1, v3);
        if loss > 9.0 * eta * ((v1 - v2).powi(2) + (v3 - v4).powi(2)) + slack {
            violations[3] += 1;
        }
    }
    Ok((
        violations.iter().all(|&v| v == 0),
        format!(
            "violations over 10^4 tuples: revenue Lipschitz {}, ancillary price Lipschitz {}, focal price {}, quadratic gap {}",
            violations[0], violations[1], violations[2], violations[3]
        ),
    ))
}

fn elliptical_potential() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut parts = Vec::new();
    let mut violations = 0;
    for d in [2usize, 5] {
        let horizon = 1_000;
        let bound = 2.0 * d as f64 * ((d as f64 + horizon as f64) / d as f64).ln();
        let mut worst = 0f64;
        for _ in 0..50 {
            let mut est = EstimatorState::new(ProductTag::Focal, d, 1.0, 1.0).map_err(|e| e.to_string())?;
            let mut total = 0.0;
            for _ in 0..horizon {
                let x = gen_feature(&FeatureSource::IidGaussianNormalized, d, 1, &mut rng).map_err(|e| e.to_string())?;
                total += est.inverse_norm(&x).powi(2);
                est.update(0.5, &x, false).map_err(|e| e.to_string())?;
            }
            worst = worst.max(total);
            violations += usize::from(total > bound);
        }
        parts.push(format!("d={d}: max sum {worst:.2} vs bound {bound:.2}"));
    }
    Ok((violations == 0, format!("{violations} violations; {}", parts.join(", "))))
}

fn mle_consistency() -> Result<(bool, String), String> {
    let dist = uniform(-2.0, 2.0);
    let constants = compute_constants(&dist, 0.1, 1.0, 0.5, CONSTANTS_GRID).map_err(|e| e.to_string())?;
    let theta = [0.3, -0.2];
    let price = 0.55;
    let mut medians = Vec::new();
    for n in [100usize, 1_000, 10_000] {
        let mut errors: Vec<f64> = (0..20u64)
            .into_par_iter()
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut est = EstimatorState::new(ProductTag::Focal, 2, 1.0, 0.5).map_err(|e| e.to_string())?;
                for t in 1..=n {
                    let x = gen_feature(&FeatureSource::IidUnitBall, 2, t, &mut rng).map_err(|e| e.to_string())?;
                    let v: f64 = x.iter().zip(&theta).map(|(a, b)| a * b).sum();
                    let bought = rng.gen::<f64>() < dist.sf(price - v);
                    est.update(price, &x, bought).map_err(|e| e.to_string())?;
                }
                est.fit(&dist, &constants).map_err(|e| e.to_string())?;
                let th = est.theta_hat();
                Ok(((th[0] - theta[0]).powi(2) + (th[1] - theta[1]).powi(2)).sqrt())
            })
            .collect::<Result<_, String>>()?;
        errors.sort_by(f64::total_cmp);
        medians.push((errors[9] + errors[10]) / 2.0);
    }
    let monotone = medians.windows(2).all(|w| w[1] < w[0]);
    Ok((
        monotone && medians[2] <= 0.1,
        format!("median error at n = 1e2, 1e3, 1e4: {:.4}, {:.4}, {:.4} (decreasing, last <= 0.1)", medians[0], medians[1], medians[2]),
    ))
}

fn determinism(workers: usize) -> Result<(bool, String), String> {
    let config: ExperimentConfig = toml::from_str(ACCEPTANCE_CONFIG).map_err(|e| e.to_string())?;
    let instance = validate(&config, Path::new(".")).map_err(|e| e.to_string())?;
    let loaded = LoadedConfig { config, instance };
    let first = run_experiment(&loaded, workers.max(2)).map_err(|e| e.to_string())?;
    let second = run_experiment(&loaded, 1).map_err(|e| e.to_string())?;
    let a = aggregate_csv_bytes(&first.aggregates).map_err(|e| e.to_string())?;
    let b = aggregate_csv_bytes(&second.aggregates).map_err(|e| e.to_string())?;
    let failed = first.failures().count() + second.failures().count();
    Ok((
        a == b && failed == 0,
        format!("{} aggregate bytes, identical: {} ({} vs 1 workers), failed episodes: {failed}", a.len(), a == b, workers.max(2)),
    ))
}

/// What the suite keeps from each episode.
#[derive(Debug, Clone)]
struct Outcome {
    summary: EpisodeSummary,
    /// Cumulative strategy regret at T/16, T/8, T/4, T/2 and T.
    checkpoints: Vec<f64>,
    /// Unbundle up to the switch time, bundle afterwards.
    switch_monotone: bool,
}

fn checkpoint_times(horizon: usize) -> Vec<usize> {
    [16, 8, 4, 2, 1].iter().map(|k| horizon / k).collect()
}

struct Batch<'a> {
    instance: &'a MarketInstance,
    kind: PolicyKind,
    radius_scale: f64,
    horizons: &'a [usize],
    seeds: u64,
}

impl Batch<'_> {
    fn run(&self, pool: &ThreadPool) -> Result<Vec<Outcome>, String> {
        let settings = PolicySettings { radius_scale: self.radius_scale, ..Default::default() };
        let benchmark = if self.kind == PolicyKind::Alg1 { Benchmark::PureUnbundle } else { Benchmark::PerCustomer };
        let keep_records = self.kind != PolicyKind::Alg1;
        // Longest episodes first so the pool stays busy at the end.
        let mut jobs: Vec<(usize, u64)> =
            self.horizons.iter().flat_map(|&h| (0..self.seeds).map(move |s| (h, s))).collect();
        jobs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        pool.install(|| {
            jobs.par_iter()
                .map(|&(horizon, seed)| {
                    let mut policy =
                        build_policy(self.kind, self.instance, horizon, settings, benchmark).map_err(|e| e.to_string())?;
                    let r = run_episode(
                        self.instance,
                        policy.as_mut(),
                        horizon,
                        seed,
                        benchmark,
                        EpisodeOptions { keep_records },
                    )
                    .map_err(|e| format!("{} T={horizon} seed={seed}: {e}", self.kind.as_str()))?;
                    let marks = checkpoint_times(horizon);
                    let mut checkpoints = Vec::new();
                    let mut acc = 0.0;
                    for rec in &r.records {
                        acc += rec.strategy_regret;
                        if marks.contains(&rec.t) {
                            checkpoints.push(acc);
                        }
                    }
                    let switch = r.summary.switch_time.unwrap_or(usize::MAX);
                    let switch_monotone = r.records.iter().all(|rec| {
                        let want = if rec.t <= switch { Strategy::Unbundle } else { Strategy::Bundle };
                        rec.strategy == want
                    });
                    Ok(Outcome { summary: r.summary, checkpoints, switch_monotone })
                })
                .collect()
        })
    }
}

fn mean_regret_series(outcomes: &[Outcome], horizons: &[usize]) -> Vec<(f64, f64)> {
    horizons
        .iter()
        .map(|&h| {
            let v: Vec<f64> =
                outcomes.iter().filter(|o| o.summary.horizon == h).map(|o| o.summary.cumulative_regret).collect();
            (h as f64, v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect()
}

fn fmt_series(series: &[(f64, f64)]) -> String {
    series.iter().map(|(t, r)| format!("{t:.0}:{r:.2}")).collect::<Vec<_>>().join(" ")
}

fn coverage(outcomes: &[Outcome]) -> (bool, String) {
    let held = outcomes.iter().filter(|o| o.summary.good_event_held).count();
    let rate = held as f64 / outcomes.len() as f64;
    (rate >= 0.95, format!("good event held in {held}/{} seeds ({:.1}%, need >= 95%)", outcomes.len(), 100.0 * rate))
}

fn lcb_dominance(all: &[&[Outcome]]) -> (bool, String) {
    let episodes: usize = all.iter().map(|o| o.len()).sum();
    let periods: usize = all.iter().flat_map(|o| o.iter()).map(|o| o.summary.good_periods).sum();
    let violations: usize = all.iter().flat_map(|o| o.iter()).map(|o| o.summary.lcb_violations).sum();
    (violations == 0, format!("{violations} violations over {periods} good-event periods in {episodes} episodes"))
}

fn sublinear(standard: &[Outcome]) -> Result<(bool, String), String> {
    let series = mean_regret_series(standard, &SCALING_HORIZONS);
    let slope = fit_regret_slope(&series).map_err(|e| e.to_string())?;
    let dd = second_divided_differences(&series);
    let concave = dd.iter().all(|d| *d <= 0.0);
    let dd_text = dd.iter().map(|d| format!("{d:.3e}")).collect::<Vec<_>>().join(", ");
    Ok((
        slope <= SLOPE_LIMIT && concave,
        format!("slope {slope:.3} (<= 0.65), second differences [{dd_text}] (<= 0), mean regret {}", fmt_series(&series)),
    ))
}

fn iid_improvement(standard: &[Outcome], adversarial: &[Outcome]) -> Result<(bool, String), String> {
    let iid = mean_regret_series(standard, &SCALING_HORIZONS);
    let adv = mean_regret_series(adversarial, &SCALING_HORIZONS);
    let (s_iid, s_adv) = (
        fit_regret_slope(&iid).map_err(|e| e.to_string())?,
        fit_regret_slope(&adv).map_err(|e| e.to_string())?,
    );
    Ok((
        s_iid < SLOPE_LIMIT && s_iid < s_adv,
        format!("iid slope {s_iid:.3} < 0.65 and < adversarial slope {s_adv:.3}; adversarial regret {}", fmt_series(&adv)),
    ))
}

fn strategy_learning(mixed: &[Outcome], share: f64) -> Result<(bool, String), String> {
    let n = mixed.len() as f64;
    let window = (STRATEGY_HORIZON / 10) as f64;
    let late = mixed.iter().map(|o| o.summary.late_mismatches as f64 / window).sum::<f64>() / n;
    let marks = checkpoint_times(STRATEGY_HORIZON);
    let series: Vec<(f64, f64)> = marks
        .iter()
        .enumerate()
        .map(|(i, &t)| (t as f64, mixed.iter().map(|o| o.checkpoints[i]).sum::<f64>() / n))
        .collect();
    let slope = fit_regret_slope(&series).map_err(|e| e.to_string())?;
    Ok((
        late <= 0.05 && slope <= SLOPE_LIMIT,
        format!(
            "bundle share {:.1}%, late mismatch rate {:.2}% (<= 5%), strategy-regret slope {slope:.3} (<= 0.65) over {}",
            100.0 * share,
            100.0 * late,
            fmt_series(&series)
        ),
    ))
}

fn one_switch(dominant: &[Outcome], gap: f64, standard: &[Outcome]) -> (bool, String) {
    let half = STRATEGY_HORIZON / 2;
    let early = dominant.iter().filter(|o| o.summary.switch_time.is_some_and(|s| s < half)).count();
    let switched_any = dominant.iter().filter(|o| o.summary.switch_time.is_some()).count();
    let never = standard.iter().filter(|o| o.summary.switch_time.is_none()).count();
    let monotone = dominant.iter().chain(standard).filter(|o| o.switch_monotone).count();
    let total = dominant.len() + standard.len();
    let pass = gap >= 0.1
        && early as f64 >= 0.9 * dominant.len() as f64
        && never as f64 >= 0.9 * standard.len() as f64
        && monotone == total;
    (
        pass,
        format!(
            "bundle-dominant (mean gap {gap:.3}): switched before T/2 in {early}/{} seeds (any time: {switched_any}), \
             unbundle-dominant: never switched in {never}/{}, monotone in {monotone}/{total}",
            dominant.len(),
            standard.len()
        ),
    )
}

pub const CRITERIA: [(usize, &str); 12] = [
    (1, "oracle equivalence"),
    (2, "g slope in (0, 1)"),
    (3, "Lipschitz and quadratic revenue lemmas"),
    (4, "confidence coverage"),
    (5, "LCB dominance"),
    (6, "sublinear regret of LCB unbundling"),
    (7, "i.i.d. improvement direction"),
    (8, "strategy learning"),
    (9, "one-switch correctness"),
    (10, "elliptical potential"),
    (11, "MLE consistency"),
    (12, "determinism"),
];

type Check<'a> = dyn Fn() -> Result<(bool, String), String> + 'a;

fn title(id: usize) -> &'static str {
    CRITERIA.iter().find(|c| c.0 == id).map_or("unknown", |c| c.1)
}

fn finish(id: usize, start: Instant, outcome: Result<(bool, String), String>) -> CriterionResult {
    let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    CriterionResult { id, title: title(id), passed, detail, elapsed: start.elapsed() }
}

/// Runs the selected criteria (all of them when `only` is empty) on
/// `workers` threads. `progress` sees each result as soon as it is known;
/// the returned list is ordered by criterion number. Criterion 5 covers
/// every episode the other selected criteria ran.
pub fn run_acceptance(workers: usize, only: &[usize], mut progress: impl FnMut(&CriterionResult)) -> Vec<CriterionResult> {
    let want = |id: usize| only.is_empty() || only.contains(&id);
    let mut results = Vec::new();
    let mut report = |r: CriterionResult| {
        progress(&r);
        results.push(r);
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            for (id, _) in CRITERIA.iter().filter(|c| want(c.0)) {
                report(finish(*id, Instant::now(), Err(format!("worker pool: {e}"))));
            }
            return results;
        }
    };

    let cheap: [(usize, &Check); 6] = [
        (1, &oracle_equivalence),
        (2, &g_slope),
        (3, &revenue_lemmas),
        (10, &elliptical_potential),
        (11, &|| pool.install(mle_consistency)),
        (12, &|| determinism(workers)),
    ];
    for (id, check) in cheap {
        if want(id) {
            let start = Instant::now();
            report(finish(id, start, check()));
        }
    }

    let standard = standard_instance(FeatureSource::IidUnitBall);
    let alg1 = |instance, horizons, seeds| Batch {
        instance,
        kind: PolicyKind::Alg1,
        radius_scale: STANDARD_RADIUS_SCALE,
        horizons,
        seeds,
    };
    // Every batch that ran, for the LCB check.
    let mut ran: Vec<Vec<Outcome>> = Vec::new();

    if want(4) || want(5) {
        let start = Instant::now();
        let out = alg1(&standard, &[COVERAGE_HORIZON], COVERAGE_SEEDS).run(&pool);
        if want(4) {
            report(finish(4, start, out.as_ref().map(|o| coverage(o)).map_err(Clone::clone)));
        }
        ran.extend(out.ok());
    }

    if want(6) || want(7) || want(5) {
        let start = Instant::now();
        let iid = alg1(&standard, &SCALING_HORIZONS, SCALING_SEEDS).run(&pool);
        if want(6) {
            report(finish(6, start, iid.as_ref().map_err(Clone::clone).and_then(|o| sublinear(o))));
        }
        if want(7) || want(5) {
            let start = Instant::now();
            let adversarial = standard_instance(adversarial_source(SCALING_HORIZONS[2]));
            let adv = alg1(&adversarial, &SCALING_HORIZONS, SCALING_SEEDS).run(&pool);
            if want(7) {
                let outcome = match (&iid, &adv) {
                    (Ok(i), Ok(a)) => iid_improvement(i, a),
                    (Err(e), _) | (_, Err(e)) => Err(e.clone()),
                };
                report(finish(7, start, outcome));
            }
            ran.extend(adv.ok());
        }
        ran.extend(iid.ok());
    }

    if want(8) || want(5) {
        let start = Instant::now();
        let mixed = mixed_instance();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let outcome = compare_mechanisms(&mixed, 10_000, &mut rng).map_err(|e| e.to_string()).and_then(|m| {
            let out = Batch {
                instance: &mixed,
                kind: PolicyKind::Alg2,
                radius_scale: MIXED_RADIUS_SCALE,
                horizons: &[STRATEGY_HORIZON],
                seeds: SCALING_SEEDS,
            }
            .run(&pool)?;
            let verdict = strategy_learning(&out, m.bundle_share);
            ran.push(out);
            verdict
        });
        if want(8) {
            report(finish(8, start, outcome));
        }
    }

    if want(9) || want(5) {
        let start = Instant::now();
        let dominant = bundle_dominant_instance();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let outcome = compare_mechanisms(&dominant, 10_000, &mut rng).map_err(|e| e.to_string()).and_then(|m| {
            let alg3 = |instance, radius_scale| Batch {
                instance,
                kind: PolicyKind::Alg3,
                radius_scale,
                horizons: &[STRATEGY_HORIZON],
                seeds: SWITCH_SEEDS,
            };
            let dom = alg3(&dominant, BUNDLE_DOMINANT_RADIUS_SCALE).run(&pool)?;
            let und = alg3(&standard, STANDARD_RADIUS_SCALE).run(&pool)?;
            let verdict = one_switch(&dom, m.bundle.mean - m.unbundle.mean, &und);
            ran.push(dom);
            ran.push(und);
            Ok(verdict)
        });
        if want(9) {
            report(finish(9, start, outcome));
        }
    }

    if want(5) {
        let start = Instant::now();
        let all: Vec<&[Outcome]> = ran.iter().map(|o| o.as_slice()).collect();
        report(finish(5, start, Ok(lcb_dominance(&all))));
    }

    results.sort_by_key(|r| r.id);
    results
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_instances_build() {
        assert_eq!(standard_instance(FeatureSource::IidUnitBall).dim, 2);
        assert_eq!(mixed_instance().dim, 1);
        assert_eq!(bundle_dominant_instance().dim, 2);
    }

    #[test]
    fn adversarial_rows_stay_in_the_ball() {
        let rows = adversarial_features(1000);
        assert_eq!(rows.len(), 1000);
        assert!(rows.iter().all(|r| r.iter().map(|v| v * v).sum::<f64>() <= 1.0 + 1e-12));
        assert!((rows[999].iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn embedded_config_validates() {
        let config: ExperimentConfig = toml::from_str(ACCEPTANCE_CONFIG).unwrap();
        validate(&config, Path::new(".")).unwrap();
    }
}
