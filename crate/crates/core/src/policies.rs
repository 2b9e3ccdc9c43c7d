//! Online learning-and-pricing policies.
//!
//! A policy sees only what the seller knows ([`SellerModel`]): the shock laws,
//! the price box, the parameter-ball radius, the dimension and the horizon. It
//! never sees the true parameters. Each period it maps a feature to a
//! [`PolicyDecision`] and then observes the realized [`Demands`].
//!
//! * [`alg1_step`]: lower-confidence-bound focal pricing for pure unbundling.
//! * [`alg2_step`]: confidence-based choice between bundling and unbundling,
//!   with ties broken toward the mechanism whose estimator is less certain
//!   about the current feature.
//! * [`alg3_step`]: unbundle while learning, switch to bundling once and for
//!   all when the averaged revenue bounds separate.
//! * [`oracle_step`]: the clairvoyant benchmarks.
//!
//! Confidence radii follow the estimator's `beta(Sigma)`, multiplied by
//! [`PolicySettings::radius_scale`] (1 reproduces the theoretical radius).
//! The switching rule's `beta_bar` is scaled the same way.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mle::{beta_bar, EstimatorState, FitSettings, MleError, ProductTag};
use crate::pricing_oracle::{
    g_domain, optimal_price_focal, optimal_price_single, optimal_strategy, PriceBox, PricingError, Strategy,
};
use crate::shock_dist::{ShockConstants, ShockDistribution};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error(transparent)]
    Pricing(#[from] PricingError),
    #[error(transparent)]
    Estimation(#[from] MleError),
    #[error("demands inconsistent with decision: {0}")]
    Consistency(String),
}

/// Public knowledge available to every policy.
#[derive(Debug, Clone)]
pub struct SellerModel {
    pub dist_f: ShockDistribution,
    pub dist_a: ShockDistribution,
    pub dist_b: ShockDistribution,
    /// Constants combined over the three laws.
    pub constants: ShockConstants,
    pub price_box: PriceBox,
    pub theta_bar: f64,
    pub dim: usize,
    pub horizon: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RefitSchedule {
    #[default]
    EveryPeriod,
    /// Refit when an estimator's sample count reaches a power of two.
    Doubling,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySettings {
    pub lambda: f64,
    pub radius_scale: f64,
    pub refit: RefitSchedule,
    pub fit: FitSettings,
}

impl Default for PolicySettings {
    fn default() -> Self {
        Self { lambda: 1.0, radius_scale: 1.0, refit: RefitSchedule::EveryPeriod, fit: FitSettings::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// LCB pricing for pure unbundling.
    Alg1,
    /// Confidence-based strategy choice.
    Alg2,
    /// One-switch.
    Alg3,
    /// Certainty-equivalent unbundling.
    Greedy,
    /// Clairvoyant benchmark for the experiment's regret mode.
    Oracle,
}

impl PolicyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::Alg1 => "alg1",
            PolicyKind::Alg2 => "alg2",
            PolicyKind::Alg3 => "alg3",
            PolicyKind::Greedy => "greedy",
            PolicyKind::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDecision {
    pub strategy: Strategy,
    pub p_f: Option<f64>,
    pub p_a: Option<f64>,
    pub p_b: Option<f64>,
    pub diagnostics: BTreeMap<&'static str, f64>,
}

impl PolicyDecision {
    pub fn unbundle(p_f: f64, p_a: f64) -> Self {
        Self { strategy: Strategy::Unbundle, p_f: Some(p_f), p_a: Some(p_a), p_b: None, diagnostics: BTreeMap::new() }
    }

    pub fn bundle(p_b: f64) -> Self {
        Self { strategy: Strategy::Bundle, p_f: None, p_a: None, p_b: Some(p_b), diagnostics: BTreeMap::new() }
    }

    /// Exactly one mechanism's prices are present and all lie in the box.
    pub fn check(&self, bx: &PriceBox) -> Result<(), String> {
        let ok = match self.strategy {
            Strategy::Unbundle => self.p_b.is_none() && self.p_f.is_some() && self.p_a.is_some(),
            Strategy::Bundle => self.p_b.is_some() && self.p_f.is_none() && self.p_a.is_none(),
        };
        if !ok {
            return Err(format!("price fields do not match strategy {}", self.strategy.as_str()));
        }
        for p in [self.p_f, self.p_a, self.p_b].into_iter().flatten() {
            if !bx.contains(p) {
                return Err(format!("price {p} outside [{}, {}]", bx.p_low, bx.p_high));
            }
        }
        Ok(())
    }
}

/// Realized purchases; `None` marks a demand that does not exist under the
/// chosen mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Demands {
    pub focal: Option<bool>,
    pub ancillary: Option<bool>,
    pub bundle: Option<bool>,
}

/// One estimator per product.
#[derive(Debug, Clone)]
pub struct Estimators {
    pub focal: EstimatorState,
    pub ancillary: EstimatorState,
    pub bundle: EstimatorState,
}

impl Estimators {
    pub fn new(model: &SellerModel, settings: &PolicySettings) -> Result<Self, PolicyError> {
        let mk = |tag| EstimatorState::new(tag, model.dim, settings.lambda, model.theta_bar);
        Ok(Self { focal: mk(ProductTag::Focal)?, ancillary: mk(ProductTag::Ancillary)?, bundle: mk(ProductTag::Bundle)? })
    }

    pub fn get(&self, tag: ProductTag) -> &EstimatorState {
        match tag {
            ProductTag::Focal => &self.focal,
            ProductTag::Ancillary => &self.ancillary,
            ProductTag::Bundle => &self.bundle,
        }
    }

    pub fn clamp_count(&self) -> u64 {
        self.focal.clamp_count() + self.ancillary.clamp_count() + self.bundle.clamp_count()
    }
}

/// Scaled confidence radius of one estimator.
pub fn radius(state: &EstimatorState, model: &SellerModel, settings: &PolicySettings) -> f64 {
    settings.radius_scale * state.beta_radius(&model.constants, model.horizon)
}

/// Clamps an argument of `g` into its domain. Returns the clamped value and
/// whether clamping happened.
fn clamp_g_argument(dist: &ShockDistribution, v: f64) -> (f64, bool) {
    let (lo, hi) = g_domain(dist);
    let pad = 1e-9 * (hi - lo).abs().max(1.0);
    let c = v.clamp(lo + pad, hi - pad);
    (c, c != v)
}

/// Pricing helpers that clamp out-of-domain valuations and count the clamps.
struct Pricer<'a> {
    model: &'a SellerModel,
    clamps: u64,
}

impl<'a> Pricer<'a> {
    fn new(model: &'a SellerModel) -> Self {
        Self { model, clamps: 0 }
    }

    fn single_price(&mut self, dist: &ShockDistribution, v: f64) -> Result<f64, PricingError> {
        let (v, c) = clamp_g_argument(dist, v);
        self.clamps += u64::from(c);
        Ok(optimal_price_single(dist, v, &self.model.price_box)?.price)
    }

    fn single_revenue(&mut self, dist: &ShockDistribution, v: f64) -> Result<f64, PricingError> {
        let p = self.single_price(dist, v)?;
        Ok(p * dist.sf(p - v))
    }

    fn focal_price(&mut self, v_f: f64, r_a: f64) -> Result<f64, PricingError> {
        let dist = &self.model.dist_f;
        let (arg, c) = clamp_g_argument(dist, v_f + r_a);
        self.clamps += u64::from(c);
        Ok(optimal_price_focal(dist, arg - r_a, r_a, &self.model.price_box)?.price)
    }

    /// Best unbundled revenue in the box at valuations `(v_f, v_a)`.
    fn unbundled_revenue(&mut self, v_f: f64, v_a: f64) -> Result<f64, PricingError> {
        let r_a = self.single_revenue(&self.model.dist_a.clone(), v_a)?;
        let p_f = self.focal_price(v_f, r_a)?;
        Ok((p_f + r_a) * self.model.dist_f.sf(p_f - v_f))
    }
}

/// LCB pricing: the focal price uses the lower bound of the focal valuation
/// and the ancillary revenue at the upper bound of the ancillary valuation;
/// the ancillary price uses the point estimate.
pub fn alg1_step(
    est: &Estimators,
    model: &SellerModel,
    settings: &PolicySettings,
    x: &[f64],
) -> Result<PolicyDecision, PolicyError> {
    let beta_f = radius(&est.focal, model, settings);
    let beta_a = radius(&est.ancillary, model, settings);
    let ci_f = est.focal.valuation_bounds(beta_f, x);
    let ci_a = est.ancillary.valuation_bounds(beta_a, x);
    let mut pricer = Pricer::new(model);
    let (p_f, p_a) = lcb_unbundle_prices(&mut pricer, est, ci_f.lcb, ci_a.ucb, x)?;
    let mut d = PolicyDecision::unbundle(p_f, p_a);
    d.diagnostics.insert("beta_f", beta_f);
    d.diagnostics.insert("beta_a", beta_a);
    d.diagnostics.insert("v_f_lcb", ci_f.lcb);
    d.diagnostics.insert("v_a_ucb", ci_a.ucb);
    d.diagnostics.insert("clamps", pricer.clamps as f64);
    Ok(d)
}

fn lcb_unbundle_prices(
    pricer: &mut Pricer<'_>,
    est: &Estimators,
    v_f_lcb: f64,
    v_a_ucb: f64,
    x: &[f64],
) -> Result<(f64, f64), PricingError> {
    let dist_a = pricer.model.dist_a.clone();
    let r_a_ucb = pricer.single_revenue(&dist_a, v_a_ucb)?;
    let p_f = pricer.focal_price(v_f_lcb, r_a_ucb)?;
    let p_a = pricer.single_price(&dist_a, est.ancillary.point_valuation(x))?;
    Ok((p_f, p_a))
}

/// Confidence-based strategy choice. Bundle valuations give an alternative
/// ancillary interval `[v_b_lcb - v_f_ucb, v_b_ucb - v_f_lcb]`; revenue bounds
/// of both mechanisms decide when they separate, otherwise the mechanism
/// whose estimator is less certain about `x` is chosen (unbundling on ties).
/// The interval bounds are computed once and reused for pricing.
pub fn alg2_step(
    est: &Estimators,
    model: &SellerModel,
    settings: &PolicySettings,
    x: &[f64],
) -> Result<PolicyDecision, PolicyError> {
    let beta_f = radius(&est.focal, model, settings);
    let beta_a = radius(&est.ancillary, model, settings);
    let beta_b = radius(&est.bundle, model, settings);
    let ci_f = est.focal.valuation_bounds(beta_f, x);
    let ci_a = est.ancillary.valuation_bounds(beta_a, x);
    let ci_b = est.bundle.valuation_bounds(beta_b, x);
    let alt_a_ucb = ci_b.ucb - ci_f.lcb;
    let alt_a_lcb = ci_b.lcb - ci_f.ucb;

    let mut pricer = Pricer::new(model);
    let dist_b = model.dist_b.clone();
    let r_u_ucb = pricer.unbundled_revenue(ci_f.ucb, alt_a_ucb)?;
    let r_u_lcb = pricer.unbundled_revenue(ci_f.lcb, alt_a_lcb)?;
    let r_b_ucb = pricer.single_revenue(&dist_b, ci_b.ucb)?;
    let r_b_lcb = pricer.single_revenue(&dist_b, ci_b.lcb)?;
    let norm_f = est.focal.inverse_norm(x);
    let norm_b = est.bundle.inverse_norm(x);

    let (strategy, rule) = if r_b_lcb > r_u_ucb {
        (Strategy::Bundle, 1.0)
    } else if r_u_lcb > r_b_ucb {
        (Strategy::Unbundle, 1.0)
    } else if norm_f >= norm_b {
        (Strategy::Unbundle, 0.0)
    } else {
        (Strategy::Bundle, 0.0)
    };
    let mut d = match strategy {
        Strategy::Unbundle => {
            let (p_f, p_a) = lcb_unbundle_prices(&mut pricer, est, ci_f.lcb, ci_a.ucb, x)?;
            PolicyDecision::unbundle(p_f, p_a)
        }
        Strategy::Bundle => PolicyDecision::bundle(pricer.single_price(&dist_b, est.bundle.point_valuation(x))?),
    };
    for (k, v) in [
        ("beta_f", beta_f),
        ("beta_a", beta_a),
        ("beta_b", beta_b),
        ("r_u_ucb", r_u_ucb),
        ("r_u_lcb", r_u_lcb),
        ("r_b_ucb", r_b_ucb),
        ("r_b_lcb", r_b_lcb),
        ("norm_f", norm_f),
        ("norm_b", norm_b),
        ("separated", rule),
        ("clamps", pricer.clamps as f64),
    ] {
        d.diagnostics.insert(k, v);
    }
    Ok(d)
}

/// Running state of the one-switch rule.
///
/// The averaged plug-in revenues are sums over every past feature evaluated
/// at the current estimates. Both revenue maps are Lipschitz in the
/// valuations, so sums kept from earlier estimates are within a computable
/// distance of the exact ones; the full recomputation only runs when that
/// slack leaves the switching condition undecided. Decisions are identical
/// to recomputing every period.
#[derive(Debug, Clone, Default)]
pub struct OneSwitchState {
    pub switched: bool,
    pub switch_time: Option<usize>,
    features: Vec<f64>,
    /// Sum of `||x_t||` in the inverse ancillary design norm at decision time.
    norm_sum: f64,
    sum_u: f64,
    sum_b: f64,
    ref_f: Vec<f64>,
    ref_a: Vec<f64>,
    drift_f: f64,
    drift_a: f64,
    /// Number of full recomputations performed.
    pub exact_passes: u64,
    pub last_bounds: Option<AverageBounds>,
}

/// Bounds on the averaged optimal revenues of both mechanisms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AverageBounds {
    pub t: usize,
    pub r_u_ucb: f64,
    pub r_u_lcb: f64,
    pub r_b_ucb: f64,
    pub r_b_lcb: f64,
}

impl OneSwitchState {
    pub fn periods(&self, dim: usize) -> usize {
        self.features.len() / dim
    }

    pub fn norm_sum(&self) -> f64 {
        self.norm_sum
    }
}

/// One-switch step: LCB unbundling until switched, then certainty-equivalent
/// bundle pricing with `theta_hat_f + theta_hat_a`.
pub fn alg3_step(
    est: &Estimators,
    model: &SellerModel,
    settings: &PolicySettings,
    state: &mut OneSwitchState,
    x: &[f64],
) -> Result<PolicyDecision, PolicyError> {
    if state.switched {
        let v_b = est.focal.point_valuation(x) + est.ancillary.point_valuation(x);
        let mut pricer = Pricer::new(model);
        let mut d = PolicyDecision::bundle(pricer.single_price(&model.dist_b, v_b)?);
        d.diagnostics.insert("clamps", pricer.clamps as f64);
        return Ok(d);
    }
    state.norm_sum += est.ancillary.inverse_norm(x);
    alg1_step(est, model, settings, x)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Evaluates the switching condition after the period-`t` observation and
/// refit. Returns true when the switch happens now.
pub fn alg3_update(
    est: &Estimators,
    model: &SellerModel,
    settings: &PolicySettings,
    state: &mut OneSwitchState,
    x: &[f64],
    t: usize,
) -> Result<bool, PolicyError> {
    if state.switched {
        return Ok(false);
    }
    let th_f = est.focal.theta_hat().as_slice();
    let th_a = est.ancillary.theta_hat().as_slice();
    if state.ref_f.is_empty() {
        state.ref_f = th_f.to_vec();
        state.ref_a = th_a.to_vec();
    }
    state.features.extend_from_slice(x);
    let n = state.features.len() / model.dim;
    let mut pricer = Pricer::new(model);
    let plug_in = |pricer: &mut Pricer<'_>, x: &[f64]| -> Result<(f64, f64), PricingError> {
        let v_f: f64 = x.iter().zip(th_f).map(|(a, b)| a * b).sum();
        let v_a: f64 = x.iter().zip(th_a).map(|(a, b)| a * b).sum();
        Ok((pricer.unbundled_revenue(v_f, v_a)?, pricer.single_revenue(&model.dist_b, v_f + v_a)?))
    };
    let (u, b) = plug_in(&mut pricer, x)?;
    state.sum_u += u;
    state.sum_b += b;
    let (df, da) = (dist(th_f, &state.ref_f), dist(th_a, &state.ref_a));
    state.drift_f = state.drift_f.max(df);
    state.drift_a = state.drift_a.max(da);

    let p_hi = model.price_box.p_high;
    let (b_f, b_a, b_b) = (model.dist_f.max_density(), model.dist_a.max_density(), model.dist_b.max_density());
    let (ef, ea) = (df + state.drift_f, da + state.drift_a);
    let slack_u = 2.0 * p_hi * b_f * ef + p_hi * b_a * ea;
    let slack_b = p_hi * b_b * (ef + ea);

    let tt = model.horizon.max(2) as f64;
    let bbar = settings.radius_scale * beta_bar(model.dim, model.horizon, settings.lambda, model.theta_bar, &model.constants);
    let width = 4.0 * p_hi * (tt.ln() / t as f64).sqrt() + 2.0 * bbar / t as f64 * state.norm_sum;
    let nf = n as f64;
    let optimistic_gap = (state.sum_b / nf + slack_b) - (state.sum_u / nf - slack_u);
    if optimistic_gap < 2.0 * width {
        return Ok(false);
    }

    let (mut su, mut sb) = (0.0, 0.0);
    for row in state.features.chunks(model.dim) {
        let (u, b) = plug_in(&mut pricer, row)?;
        su += u;
        sb += b;
    }
    state.exact_passes += 1;
    state.sum_u = su;
    state.sum_b = sb;
    state.ref_f = th_f.to_vec();
    state.ref_a = th_a.to_vec();
    state.drift_f = 0.0;
    state.drift_a = 0.0;
    let bounds = AverageBounds {
        t,
        r_u_ucb: su / nf + width,
        r_u_lcb: su / nf - width,
        r_b_ucb: sb / nf + width,
        r_b_lcb: sb / nf - width,
    };
    state.last_bounds = Some(bounds);
    if bounds.r_b_lcb >= bounds.r_u_ucb {
        state.switched = true;
        state.switch_time = Some(t);
        return Ok(true);
    }
    Ok(false)
}

/// Certainty-equivalent unbundling at the point estimates.
pub fn greedy_step(est: &Estimators, model: &SellerModel, x: &[f64]) -> Result<PolicyDecision, PolicyError> {
    let mut pricer = Pricer::new(model);
    let v_a = est.ancillary.point_valuation(x);
    let r_a = pricer.single_revenue(&model.dist_a, v_a)?;
    let p_f = pricer.focal_price(est.focal.point_valuation(x), r_a)?;
    let p_a = pricer.single_price(&model.dist_a, v_a)?;
    Ok(PolicyDecision::unbundle(p_f, p_a))
}

/// Benchmark against which regret is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchmarkMode {
    /// Best unbundled prices for each customer.
    PureUnbundle,
    /// Best mechanism and prices for each customer.
    PerCustomer,
    /// Best single mechanism in expectation over features, priced per customer.
    FixedBest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    PureUnbundle,
    PerCustomer,
    Fixed(Strategy),
}

/// Clairvoyant decision at true valuations `x^T theta_f`, `x^T theta_a`.
pub fn oracle_step(
    model: &SellerModel,
    theta_f: &[f64],
    theta_a: &[f64],
    x: &[f64],
    mode: OracleMode,
) -> Result<PolicyDecision, PolicyError> {
    let v_f: f64 = x.iter().zip(theta_f).map(|(a, b)| a * b).sum();
    let v_a: f64 = x.iter().zip(theta_a).map(|(a, b)| a * b).sum();
    let q = optimal_strategy(&model.dist_f, &model.dist_a, &model.dist_b, v_f, v_a, &model.price_box)?;
    let unbundle = || {
        let (p_f, p_a) = (q.p_f, q.p_a);
        match (p_f, p_a) {
            (Some(p_f), Some(p_a)) => Ok(PolicyDecision::unbundle(p_f, p_a)),
            _ => {
                let p_a = optimal_price_single(&model.dist_a, v_a, &model.price_box)?.price;
                let r_a = p_a * model.dist_a.sf(p_a - v_a);
                let p_f = optimal_price_focal(&model.dist_f, v_f, r_a, &model.price_box)?.price;
                Ok::<_, PricingError>(PolicyDecision::unbundle(p_f, p_a))
            }
        }
    };
    let bundle = || match q.p_b {
        Some(p) => Ok::<_, PricingError>(PolicyDecision::bundle(p)),
        None => Ok(PolicyDecision::bundle(optimal_price_single(&model.dist_b, v_f + v_a, &model.price_box)?.price)),
    };
    let mut d = match mode {
        OracleMode::PureUnbundle | OracleMode::Fixed(Strategy::Unbundle) => unbundle()?,
        OracleMode::Fixed(Strategy::Bundle) => bundle()?,
        OracleMode::PerCustomer => match q.strategy {
            Strategy::Unbundle => unbundle()?,
            Strategy::Bundle => bundle()?,
        },
    };
    d.diagnostics.insert("r_u_star", q.unbundle_revenue);
    d.diagnostics.insert("r_b_star", q.bundle_revenue);
    Ok(d)
}

/// Appends one period's data to the estimators. Unbundling feeds the focal
/// estimator always and the ancillary estimator only after a focal purchase;
/// bundling feeds the bundle estimator. No refit.
pub fn observe(
    est: &mut Estimators,
    decision: &PolicyDecision,
    x: &[f64],
    demands: &Demands,
) -> Result<Vec<ProductTag>, PolicyError> {
    let bad = |msg: &str| Err(PolicyError::Consistency(msg.to_string()));
    match decision.strategy {
        Strategy::Unbundle => {
            let (Some(p_f), Some(p_a)) = (decision.p_f, decision.p_a) else {
                return bad("unbundling decision without focal and ancillary prices");
            };
            if demands.bundle.is_some() {
                return bad("bundle demand under unbundling");
            }
            let Some(d_f) = demands.focal else {
                return bad("missing focal demand under unbundling");
            };
            est.focal.update(p_f, x, d_f)?;
            if d_f {
                let Some(d_a) = demands.ancillary else {
                    return bad("missing ancillary demand after a focal purchase");
                };
                est.ancillary.update(p_a, x, d_a)?;
                Ok(vec![ProductTag::Focal, ProductTag::Ancillary])
            } else {
                if demands.ancillary == Some(true) {
                    return bad("ancillary purchase without focal purchase");
                }
                Ok(vec![ProductTag::Focal])
            }
        }
        Strategy::Bundle => {
            let Some(p_b) = decision.p_b else {
                return bad("bundling decision without a bundle price");
            };
            if demands.focal.is_some() || demands.ancillary.is_some() {
                return bad("separate demands under bundling");
            }
            let Some(d_b) = demands.bundle else {
                return bad("missing bundle demand under bundling");
            };
            est.bundle.update(p_b, x, d_b)?;
            Ok(vec![ProductTag::Bundle])
        }
    }
}

/// Common interface used by the simulator.
pub trait Policy: Send {
    fn kind(&self) -> PolicyKind;
    fn decide(&mut self, t: usize, x: &[f64]) -> Result<PolicyDecision, PolicyError>;
    fn observe(&mut self, t: usize, x: &[f64], decision: &PolicyDecision, demands: &Demands) -> Result<(), PolicyError>;
    /// Estimators and their scaled radii whose confidence sets drive the
    /// decisions, for coverage accounting by the simulator.
    fn confidence_sets(&self) -> Vec<(ProductTag, &EstimatorState, f64)>;
    fn estimators(&self) -> Option<&Estimators>;
    fn one_switch(&self) -> Option<&OneSwitchState> {
        None
    }
}

/// A learning policy: one of the three algorithms or the greedy baseline.
pub struct LearningPolicy {
    kind: PolicyKind,
    model: SellerModel,
    settings: PolicySettings,
    est: Estimators,
    switch: OneSwitchState,
}

impl LearningPolicy {
    pub fn new(kind: PolicyKind, model: SellerModel, settings: PolicySettings) -> Result<Self, PolicyError> {
        assert!(kind != PolicyKind::Oracle, "the oracle is built with OraclePolicy");
        let est = Estimators::new(&model, &settings)?;
        Ok(Self { kind, model, settings, est, switch: OneSwitchState::default() })
    }

    pub fn model(&self) -> &SellerModel {
        &self.model
    }

    fn refit(&mut self, tags: &[ProductTag]) -> Result<(), PolicyError> {
        for tag in tags {
            let (state, dist) = match tag {
                ProductTag::Focal => (&mut self.est.focal, &self.model.dist_f),
                ProductTag::Ancillary => (&mut self.est.ancillary, &self.model.dist_a),
                ProductTag::Bundle => (&mut self.est.bundle, &self.model.dist_b),
            };
            let due = match self.settings.refit {
                RefitSchedule::EveryPeriod => true,
                RefitSchedule::Doubling => state.len().is_power_of_two(),
            };
            if due {
                state.fit_with(dist, &self.model.constants, &self.settings.fit)?;
            }
        }
        Ok(())
    }
}

impl Policy for LearningPolicy {
    fn kind(&self) -> PolicyKind {
        self.kind
    }

    fn decide(&mut self, _t: usize, x: &[f64]) -> Result<PolicyDecision, PolicyError> {
        match self.kind {
            PolicyKind::Alg1 => alg1_step(&self.est, &self.model, &self.settings, x),
            PolicyKind::Alg2 => alg2_step(&self.est, &self.model, &self.settings, x),
            PolicyKind::Alg3 => alg3_step(&self.est, &self.model, &self.settings, &mut self.switch, x),
            PolicyKind::Greedy => greedy_step(&self.est, &self.model, x),
            PolicyKind::Oracle => unreachable!(),
        }
    }

    fn observe(&mut self, t: usize, x: &[f64], decision: &PolicyDecision, demands: &Demands) -> Result<(), PolicyError> {
        let touched = observe(&mut self.est, decision, x, demands)?;
        self.refit(&touched)?;
        if self.kind == PolicyKind::Alg3 {
            alg3_update(&self.est, &self.model, &self.settings, &mut self.switch, x, t)?;
        }
        Ok(())
    }

    fn confidence_sets(&self) -> Vec<(ProductTag, &EstimatorState, f64)> {
        let mut tags = vec![ProductTag::Focal, ProductTag::Ancillary];
        if self.kind == PolicyKind::Alg2 {
            tags.push(ProductTag::Bundle);
        }
        if self.kind == PolicyKind::Greedy {
            return Vec::new();
        }
        tags.into_iter()
            .map(|tag| {
                let s = self.est.get(tag);
                (tag, s, radius(s, &self.model, &self.settings))
            })
            .collect()
    }

    fn estimators(&self) -> Option<&Estimators> {
        Some(&self.est)
    }

    fn one_switch(&self) -> Option<&OneSwitchState> {
        (self.kind == PolicyKind::Alg3).then_some(&self.switch)
    }
}

/// Clairvoyant policy holding the true parameters.
pub struct OraclePolicy {
    model: SellerModel,
    theta_f: Vec<f64>,
    theta_a: Vec<f64>,
    mode: OracleMode,
}

impl OraclePolicy {
    pub fn new(model: SellerModel, theta_f: Vec<f64>, theta_a: Vec<f64>, mode: OracleMode) -> Self {
        Self { model, theta_f, theta_a, mode }
    }
}

impl Policy for OraclePolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Oracle
    }

    fn decide(&mut self, _t: usize, x: &[f64]) -> Result<PolicyDecision, PolicyError> {
        oracle_step(&self.model, &self.theta_f, &self.theta_a, x, self.mode)
    }

    fn observe(&mut self, _t: usize, _x: &[f64], _d: &PolicyDecision, _demands: &Demands) -> Result<(), PolicyError> {
        Ok(())
    }

    fn confidence_sets(&self) -> Vec<(ProductTag, &EstimatorState, f64)> {
        Vec::new()
    }

    fn estimators(&self) -> Option<&Estimators> {
        None
    }
}
