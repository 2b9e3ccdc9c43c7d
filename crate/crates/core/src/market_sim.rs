//! Ground-truth market: feature streams, demand realization and exact
//! expected-regret accounting.
//!
//! Policies never receive a [`MarketInstance`]; they are built from its
//! public part ([`MarketInstance::seller_model`]). The simulator alone uses
//! the true parameters, for demand draws, regret and coverage bookkeeping.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mle::ProductTag;
use crate::policies::{
    BenchmarkMode, Demands, LearningPolicy, OracleMode, OraclePolicy, Policy, PolicyDecision, PolicyError,
    PolicyKind, PolicySettings, SellerModel,
};
use crate::pricing_oracle::{
    expected_revenue_bundled, expected_revenue_unbundled, optimal_strategy, PriceBox, PricingError, RevenueQuote,
    Strategy,
};
use crate::shock_dist::{compute_constants, ShockConstants, ShockDistribution, ShockError};

/// Grid size for constants of the three shock laws.
pub const CONSTANTS_GRID: usize = 10_000;
/// Grid size for numerically convolved bundle shocks.
pub const CONVOLUTION_GRID: usize = 10_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid instance: {0}")]
    Instance(String),
    #[error(transparent)]
    Shock(#[from] ShockError),
    #[error(transparent)]
    Pricing(#[from] PricingError),
    #[error("feature file {path}: {reason}")]
    FeatureFile { path: PathBuf, reason: String },
    #[error("q* needs an i.i.d. feature source")]
    Unsupported,
    #[error("period {period}: {source}")]
    Period { period: usize, source: PolicyError },
    #[error("period {period}: decision check failed: {reason}")]
    Decision { period: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureSource {
    /// Uniform on the unit ball.
    IidUnitBall,
    /// Standard normal, scaled down to norm 1 when it exceeds 1.
    IidGaussianNormalized,
    /// Replays rows of a file, one feature per period.
    FixedSequence { path: PathBuf, rows: Arc<Vec<Vec<f64>>> },
}

impl FeatureSource {
    /// Loads a comma-separated feature file with `dim` columns per row.
    pub fn fixed_sequence(path: impl AsRef<Path>, dim: usize) -> Result<Self, SimError> {
        let path = path.as_ref().to_path_buf();
        let err = |reason: String| SimError::FeatureFile { path: path.clone(), reason };
        let text = std::fs::read_to_string(&path).map_err(|e| err(e.to_string()))?;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let row: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| err(format!("line {}: {e}", i + 1)))?;
            if row.len() != dim {
                return Err(err(format!("line {}: expected {dim} columns, found {}", i + 1, row.len())));
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1.0 + 1e-12 {
                return Err(err(format!("line {}: feature norm {norm} exceeds 1", i + 1)));
            }
            rows.push(row);
        }
        Ok(FeatureSource::FixedSequence { path, rows: Arc::new(rows) })
    }

    pub fn is_iid(&self) -> bool {
        !matches!(self, FeatureSource::FixedSequence { .. })
    }
}

/// Feature for period `t` (1-based).
pub fn gen_feature<R: Rng + ?Sized>(source: &FeatureSource, dim: usize, t: usize, rng: &mut R) -> Result<Vec<f64>, SimError> {
    match source {
        FeatureSource::IidUnitBall => {
            let mut x = standard_normal(dim, rng);
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let r = rng.gen::<f64>().powf(1.0 / dim as f64);
            x.iter_mut().for_each(|v| *v *= r / norm);
            Ok(x)
        }
        FeatureSource::IidGaussianNormalized => {
            let mut x = standard_normal(dim, rng);
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1.0 {
                x.iter_mut().for_each(|v| *v /= norm);
            }
            Ok(x)
        }
        FeatureSource::FixedSequence { path, rows } => rows.get(t - 1).cloned().ok_or_else(|| SimError::FeatureFile {
            path: path.clone(),
            reason: format!("period {t} requested but the file has {} rows", rows.len()),
        }),
    }
}

fn standard_normal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    let normal = ShockDistribution::normal(0.0, 1.0).expect("standard normal");
    (0..dim).map(|_| normal.sample(rng)).collect()
}

/// How the bundle shock is drawn.
#[derive(Debug, Clone, PartialEq)]
pub enum BundleShock {
    /// Its own configured law.
    Explicit(ShockDistribution),
    /// Sum of a focal and an ancillary draw; pricing uses the convolved law.
    Convolution,
}

#[derive(Debug, Clone)]
pub struct MarketInstance {
    pub dim: usize,
    pub theta_f: Vec<f64>,
    pub theta_a: Vec<f64>,
    pub theta_b: Vec<f64>,
    pub dist_f: ShockDistribution,
    pub dist_a: ShockDistribution,
    /// Law used for bundle pricing (the convolution in that mode).
    pub dist_b: ShockDistribution,
    pub bundle_shock: BundleShock,
    pub price_box: PriceBox,
    pub theta_bar: f64,
    pub features: FeatureSource,
    pub constants: ShockConstants,
}

impl MarketInstance {
    /// Validates parameter norms, the working interval of every law, and sets
    /// `theta_b = theta_f + theta_a`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        theta_f: Vec<f64>,
        theta_a: Vec<f64>,
        dist_f: ShockDistribution,
        dist_a: ShockDistribution,
        bundle_shock: BundleShock,
        price_box: PriceBox,
        theta_bar: f64,
        features: FeatureSource,
    ) -> Result<Self, SimError> {
        let dim = theta_f.len();
        if dim == 0 || theta_a.len() != dim {
            return Err(SimError::Instance(format!(
                "theta_f and theta_a must share a positive dimension, got {} and {}",
                theta_f.len(),
                theta_a.len()
            )));
        }
        if !(theta_bar > 0.0) {
            return Err(SimError::Instance(format!("theta_bar must be positive, got {theta_bar}")));
        }
        let theta_b: Vec<f64> = theta_f.iter().zip(&theta_a).map(|(a, b)| a + b).collect();
        for (name, th) in [("theta_f", &theta_f), ("theta_a", &theta_a), ("theta_b", &theta_b)] {
            let n = th.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > theta_bar + 1e-12 {
                return Err(SimError::Instance(format!("{name} has norm {n} > theta_bar = {theta_bar}")));
            }
        }
        if let FeatureSource::FixedSequence { rows, .. } = &features {
            if rows.iter().any(|r| r.len() != dim) {
                return Err(SimError::Instance("feature file dimension differs from theta".into()));
            }
        }
        let dist_b = match &bundle_shock {
            BundleShock::Explicit(d) => d.clone(),
            BundleShock::Convolution => ShockDistribution::convolve(&dist_f, &dist_a, CONVOLUTION_GRID)?,
        };
        let parts = [&dist_f, &dist_a, &dist_b]
            .iter()
            .map(|d| compute_constants(d, price_box.p_low, price_box.p_high, theta_bar, CONSTANTS_GRID))
            .collect::<Result<Vec<_>, _>>()?;
        let constants = ShockConstants::combine(&parts, price_box.p_high);
        Ok(Self { dim, theta_f, theta_a, theta_b, dist_f, dist_a, dist_b, bundle_shock, price_box, theta_bar, features, constants })
    }

    pub fn seller_model(&self, horizon: usize) -> SellerModel {
        SellerModel {
            dist_f: self.dist_f.clone(),
            dist_a: self.dist_a.clone(),
            dist_b: self.dist_b.clone(),
            constants: self.constants,
            price_box: self.price_box,
            theta_bar: self.theta_bar,
            dim: self.dim,
            horizon,
        }
    }

    pub fn theta(&self, tag: ProductTag) -> &[f64] {
        match tag {
            ProductTag::Focal => &self.theta_f,
            ProductTag::Ancillary => &self.theta_a,
            ProductTag::Bundle => &self.theta_b,
        }
    }

    pub fn valuations(&self, x: &[f64]) -> (f64, f64) {
        (dot(x, &self.theta_f), dot(x, &self.theta_a))
    }

    /// Clairvoyant revenues and prices of both mechanisms at `x`.
    pub fn quote(&self, x: &[f64]) -> Result<RevenueQuote, PricingError> {
        let (v_f, v_a) = self.valuations(x);
        optimal_strategy(&self.dist_f, &self.dist_a, &self.dist_b, v_f, v_a, &self.price_box)
    }

    /// Exact expected revenue of a decision at `x`.
    pub fn expected_revenue(&self, decision: &PolicyDecision, x: &[f64]) -> f64 {
        let (v_f, v_a) = self.valuations(x);
        match decision.strategy {
            Strategy::Unbundle => expected_revenue_unbundled(
                &self.dist_f,
                &self.dist_a,
                decision.p_f.unwrap_or(f64::NAN),
                decision.p_a.unwrap_or(f64::NAN),
                v_f,
                v_a,
            ),
            Strategy::Bundle => expected_revenue_bundled(&self.dist_b, decision.p_b.unwrap_or(f64::NAN), v_f + v_a),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draws purchases for a decision. Unbundling: the ancillary shock is only
/// drawn after a focal purchase. Bundling: one bundle draw.
pub fn realize_demand<R: Rng + ?Sized>(instance: &MarketInstance, decision: &PolicyDecision, x: &[f64], rng: &mut R) -> Demands {
    let (v_f, v_a) = instance.valuations(x);
    match decision.strategy {
        Strategy::Unbundle => {
            let d_f = v_f + instance.dist_f.sample(rng) >= decision.p_f.unwrap_or(f64::INFINITY);
            let d_a = d_f && v_a + instance.dist_a.sample(rng) >= decision.p_a.unwrap_or(f64::INFINITY);
            Demands { focal: Some(d_f), ancillary: Some(d_a), bundle: None }
        }
        Strategy::Bundle => {
            let eps = match &instance.bundle_shock {
                BundleShock::Explicit(d) => d.sample(rng),
                BundleShock::Convolution => instance.dist_f.sample(rng) + instance.dist_a.sample(rng),
            };
            let d_b = v_f + v_a + eps >= decision.p_b.unwrap_or(f64::INFINITY);
            Demands { focal: None, ancillary: None, bundle: Some(d_b) }
        }
    }
}

/// Per-period benchmark and its accounting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodRegret {
    pub expected_regret: f64,
    pub strategy_regret: f64,
    pub benchmark_revenue: f64,
    pub policy_revenue: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Benchmark {
    PureUnbundle,
    PerCustomer,
    Fixed(Strategy),
}

/// Expected regret of `decision` at `x` against the benchmark, from exact
/// expected revenues. The strategy-regret term is the revenue gap between the
/// mechanisms when the per-customer benchmark picks the other one.
pub fn per_period_regret(
    instance: &MarketInstance,
    decision: &PolicyDecision,
    x: &[f64],
    benchmark: Benchmark,
) -> Result<PeriodRegret, PricingError> {
    let q = instance.quote(x)?;
    Ok(regret_from_quote(instance, &q, decision, x, benchmark))
}

fn regret_from_quote(
    instance: &MarketInstance,
    q: &RevenueQuote,
    decision: &PolicyDecision,
    x: &[f64],
    benchmark: Benchmark,
) -> PeriodRegret {
    let policy_revenue = instance.expected_revenue(decision, x);
    let (benchmark_revenue, strategy_regret) = match benchmark {
        Benchmark::PureUnbundle => (q.unbundle_revenue, 0.0),
        Benchmark::PerCustomer => {
            let gap = if decision.strategy != q.strategy { (q.bundle_revenue - q.unbundle_revenue).abs() } else { 0.0 };
            (q.expected_revenue, gap)
        }
        Benchmark::Fixed(Strategy::Unbundle) => (q.unbundle_revenue, 0.0),
        Benchmark::Fixed(Strategy::Bundle) => (q.bundle_revenue, 0.0),
    };
    PeriodRegret { expected_regret: benchmark_revenue - policy_revenue, strategy_regret, benchmark_revenue, policy_revenue }
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
}

/// Mean and standard error of a sample.
pub fn estimate(values: impl Iterator<Item = f64>) -> Estimate {
    let (mut n, mut s, mut s2) = (0usize, 0.0, 0.0);
    for v in values {
        n += 1;
        s += v;
        s2 += v * v;
    }
    let mean = s / n as f64;
    let var = (s2 / n as f64 - mean * mean).max(0.0) * n as f64 / (n.max(2) - 1) as f64;
    Estimate { mean, std_err: (var / n as f64).sqrt(), n }
}

/// Focal purchase probability under clairvoyant unbundled pricing at `x`.
pub fn focal_purchase_probability(instance: &MarketInstance, x: &[f64]) -> Result<f64, PricingError> {
    let q = instance.quote(x)?;
    let (v_f, _) = instance.valuations(x);
    let p_f = match q.p_f {
        Some(p) => p,
        None => clairvoyant_unbundle_prices(instance, x)?.0,
    };
    Ok(instance.dist_f.sf(p_f - v_f))
}

/// Box-optimal unbundled prices `(p_f, p_a)` at the true valuations.
pub fn clairvoyant_unbundle_prices(instance: &MarketInstance, x: &[f64]) -> Result<(f64, f64), PricingError> {
    let model = instance.seller_model(1);
    let d = crate::policies::oracle_step(&model, &instance.theta_f, &instance.theta_a, x, OracleMode::PureUnbundle)
        .map_err(|e| match e {
            PolicyError::Pricing(p) => p,
            other => unreachable!("oracle pricing failed with {other}"),
        })?;
    Ok((d.p_f.expect("unbundle decision"), d.p_a.expect("unbundle decision")))
}

/// `q*`: expected focal purchase probability under clairvoyant unbundled
/// pricing, averaged over `n_samples` i.i.d. features.
pub fn compute_q_star<R: Rng + ?Sized>(instance: &MarketInstance, n_samples: usize, rng: &mut R) -> Result<Estimate, SimError> {
    if !instance.features.is_iid() {
        return Err(SimError::Unsupported);
    }
    let mut vals = Vec::with_capacity(n_samples);
    for t in 1..=n_samples {
        let x = gen_feature(&instance.features, instance.dim, t, rng)?;
        vals.push(focal_purchase_probability(instance, &x)?);
    }
    Ok(estimate(vals.into_iter()))
}

/// Expected optimal revenue of each mechanism over the feature law, and the
/// better one (unbundling on ties).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismComparison {
    pub unbundle: Estimate,
    pub bundle: Estimate,
    pub best: Strategy,
    /// Fraction of features whose per-customer optimum is bundling.
    pub bundle_share: f64,
}

pub fn compare_mechanisms<R: Rng + ?Sized>(
    instance: &MarketInstance,
    n_samples: usize,
    rng: &mut R,
) -> Result<MechanismComparison, SimError> {
    let mut u = Vec::with_capacity(n_samples);
    let mut b = Vec::with_capacity(n_samples);
    let mut bundles = 0usize;
    for t in 1..=n_samples {
        let x = gen_feature(&instance.features, instance.dim, t, rng)?;
        let q = instance.quote(&x)?;
        u.push(q.unbundle_revenue);
        b.push(q.bundle_revenue);
        bundles += usize::from(q.strategy == Strategy::Bundle);
    }
    let (unbundle, bundle) = (estimate(u.into_iter()), estimate(b.into_iter()));
    let best = if bundle.mean > unbundle.mean { Strategy::Bundle } else { Strategy::Unbundle };
    Ok(MechanismComparison { unbundle, bundle, best, bundle_share: bundles as f64 / n_samples as f64 })
}

/// One period of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodRecord {
    pub t: usize,
    pub strategy: Strategy,
    pub p_f: Option<f64>,
    pub p_a: Option<f64>,
    pub p_b: Option<f64>,
    pub d_f: Option<bool>,
    pub d_a: Option<bool>,
    pub d_b: Option<bool>,
    pub exp_regret: f64,
    pub strategy_regret: f64,
    /// Focal purchases so far, `N(t)`.
    pub n_focal: u64,
    /// The truth lies in every confidence set the policy used this period.
    pub good_event: bool,
    /// Box-optimal focal price at the true valuations.
    pub clairvoyant_p_f: f64,
    /// Per-customer optimal mechanism.
    pub optimal_strategy: Strategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub horizon: usize,
    pub seed: u64,
    pub cumulative_regret: f64,
    pub cumulative_strategy_regret: f64,
    pub benchmark_revenue: f64,
    pub policy_revenue: f64,
    pub n_focal: u64,
    pub ancillary_observations: usize,
    pub good_event_held: bool,
    pub good_periods: usize,
    /// Largest `||theta_hat - theta*||_Sigma / radius` over periods and sets.
    pub max_radius_ratio: f64,
    /// Periods in which the good event held but the focal price exceeded the
    /// clairvoyant focal price.
    pub lcb_violations: usize,
    pub switch_time: Option<usize>,
    pub strategy_mismatches: usize,
    /// Mismatches in the final tenth of the horizon.
    pub late_mismatches: usize,
    pub bundle_periods: usize,
    pub clamp_count: u64,
    pub q_star: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub policy: PolicyKind,
    pub records: Vec<PeriodRecord>,
    pub summary: EpisodeSummary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeOptions {
    pub keep_records: bool,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        Self { keep_records: true }
    }
}

/// Independent random streams of one episode.
pub fn episode_rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut features = ChaCha8Rng::seed_from_u64(seed);
    features.set_stream(1);
    let mut demand = ChaCha8Rng::seed_from_u64(seed);
    demand.set_stream(2);
    (features, demand)
}

pub fn benchmark_for(mode: BenchmarkMode, fixed_best: Option<Strategy>) -> Benchmark {
    match mode {
        BenchmarkMode::PureUnbundle => Benchmark::PureUnbundle,
        BenchmarkMode::PerCustomer => Benchmark::PerCustomer,
        BenchmarkMode::FixedBest => Benchmark::Fixed(fixed_best.unwrap_or(Strategy::Unbundle)),
    }
}

/// Builds a policy; the oracle receives the truth, learners only the seller model.
pub fn build_policy(
    kind: PolicyKind,
    instance: &MarketInstance,
    horizon: usize,
    settings: PolicySettings,
    benchmark: Benchmark,
) -> Result<Box<dyn Policy>, SimError> {
    let model = instance.seller_model(horizon);
    Ok(match kind {
        PolicyKind::Oracle => {
            let mode = match benchmark {
                Benchmark::PureUnbundle => OracleMode::PureUnbundle,
                Benchmark::PerCustomer => OracleMode::PerCustomer,
                Benchmark::Fixed(s) => OracleMode::Fixed(s),
            };
            Box::new(OraclePolicy::new(model, instance.theta_f.clone(), instance.theta_a.clone(), mode))
        }
        k => Box::new(LearningPolicy::new(k, model, settings).map_err(|e| SimError::Period { period: 0, source: e })?),
    })
}

/// Runs one episode of `horizon` periods. Deterministic given `seed`.
pub fn run_episode(
    instance: &MarketInstance,
    policy: &mut dyn Policy,
    horizon: usize,
    seed: u64,
    benchmark: Benchmark,
    options: EpisodeOptions,
) -> Result<EpisodeResult, SimError> {
    let (mut feat_rng, mut demand_rng) = episode_rngs(seed);
    let mut records = Vec::with_capacity(if options.keep_records { horizon } else { 0 });
    let mut s = EpisodeSummary {
        horizon,
        seed,
        cumulative_regret: 0.0,
        cumulative_strategy_regret: 0.0,
        benchmark_revenue: 0.0,
        policy_revenue: 0.0,
        n_focal: 0,
        ancillary_observations: 0,
        good_event_held: true,
        good_periods: 0,
        max_radius_ratio: 0.0,
        lcb_violations: 0,
        switch_time: None,
        strategy_mismatches: 0,
        late_mismatches: 0,
        bundle_periods: 0,
        clamp_count: 0,
        q_star: None,
    };
    let late_from = horizon - horizon / 10 + 1;
    for t in 1..=horizon {
        let x = gen_feature(&instance.features, instance.dim, t, &mut feat_rng)?;
        let decision = policy.decide(t, &x).map_err(|e| SimError::Period { period: t, source: e })?;
        decision.check(&instance.price_box).map_err(|reason| SimError::Decision { period: t, reason })?;
        let mut good = true;
        for (tag, state, beta) in policy.confidence_sets() {
            let dist = state.sigma_distance(instance.theta(tag));
            good &= dist <= beta;
            s.max_radius_ratio = s.max_radius_ratio.max(dist / beta);
        }
        let q = instance.quote(&x).map_err(|e| SimError::Period { period: t, source: e.into() })?;
        let clairvoyant_p_f = match q.p_f {
            Some(p) => p,
            None => clairvoyant_unbundle_prices(instance, &x)?.0,
        };
        let r = regret_from_quote(instance, &q, &decision, &x, benchmark);
        let demands = realize_demand(instance, &decision, &x, &mut demand_rng);
        policy.observe(t, &x, &decision, &demands).map_err(|e| SimError::Period { period: t, source: e })?;

        s.cumulative_regret += r.expected_regret;
        s.cumulative_strategy_regret += r.strategy_regret;
        s.benchmark_revenue += r.benchmark_revenue;
        s.policy_revenue += r.policy_revenue;
        s.n_focal += u64::from(demands.focal == Some(true));
        s.good_event_held &= good;
        s.good_periods += usize::from(good);
        if good && decision.strategy == Strategy::Unbundle && decision.p_f.is_some_and(|p| p > clairvoyant_p_f + 1e-9) {
            s.lcb_violations += 1;
        }
        if decision.strategy != q.strategy {
            s.strategy_mismatches += 1;
            if t >= late_from {
                s.late_mismatches += 1;
            }
        }
        s.bundle_periods += usize::from(decision.strategy == Strategy::Bundle);
        s.clamp_count += decision.diagnostics.get("clamps").copied().unwrap_or(0.0) as u64;
        if options.keep_records {
            records.push(PeriodRecord {
                t,
                strategy: decision.strategy,
                p_f: decision.p_f,
                p_a: decision.p_a,
                p_b: decision.p_b,
                d_f: demands.focal,
                d_a: demands.ancillary,
                d_b: demands.bundle,
                exp_regret: r.expected_regret,
                strategy_regret: r.strategy_regret,
                n_focal: s.n_focal,
                good_event: good,
                clairvoyant_p_f,
                optimal_strategy: q.strategy,
            });
        }
    }
    if let Some(est) = policy.estimators() {
        s.ancillary_observations = est.ancillary.len();
        s.clamp_count += est.clamp_count();
    }
    s.switch_time = policy.one_switch().and_then(|st| st.switch_time);
    Ok(EpisodeResult { policy: policy.kind(), records, summary: s })
}
