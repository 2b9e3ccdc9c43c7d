//! Optimal prices and expected revenues for known valuations.
//!
//! `g(v) = v + phi^{-1}(-v)` maps a deterministic valuation to its
//! revenue-maximizing posted price. The focal price folds in the expected
//! ancillary revenue `r_a`: `p_f(v_f, r_a) = g_f(v_f + r_a) - r_a`.
//!
//! Two families of revenue helpers live here. `optimal_revenue_single` and
//! friends are the unconstrained optima. The `box_*` variants price inside a
//! [`PriceBox`] (clipping the unconstrained optimum, which is exact because
//! the revenue curves are unimodal) and are what policies and the simulator
//! benchmark use.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::shock_dist::ShockDistribution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PricingError {
    #[error("-v = {target} is outside the attainable virtual-valuation range [{lo}, {hi}]")]
    Bracket { target: f64, lo: f64, hi: f64 },
    #[error("invalid price box [{0}, {1}]: need 0 < p_low < p_high")]
    InvalidBox(f64, f64),
    #[error("ancillary revenue must be nonnegative, got {0}")]
    NegativeAncillaryRevenue(f64),
}

const BISECTION_TOL: f64 = 1e-10;
const BISECTION_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceBox {
    pub p_low: f64,
    pub p_high: f64,
}

impl PriceBox {
    pub fn new(p_low: f64, p_high: f64) -> Result<Self, PricingError> {
        if !(p_low.is_finite() && p_high.is_finite() && 0.0 < p_low && p_low < p_high) {
            return Err(PricingError::InvalidBox(p_low, p_high));
        }
        Ok(Self { p_low, p_high })
    }

    pub fn contains(&self, p: f64) -> bool {
        p >= self.p_low && p <= self.p_high
    }

    pub fn clip(&self, p: f64) -> ClippedPrice {
        let price = p.clamp(self.p_low, self.p_high);
        ClippedPrice { price, clipped: price != p }
    }
}

/// A price after projection onto the box; `clipped` flags an interior optimum
/// that fell outside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClippedPrice {
    pub price: f64,
    pub clipped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    Bundle,
    Unbundle,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Bundle => "bundle",
            Strategy::Unbundle => "unbundle",
        }
    }
}

/// Optimal strategy, prices, and expected revenue at known valuations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RevenueQuote {
    pub strategy: Strategy,
    pub p_f: Option<f64>,
    pub p_a: Option<f64>,
    pub p_b: Option<f64>,
    pub expected_revenue: f64,
    /// Optimal expected revenue of the unbundling strategy.
    pub unbundle_revenue: f64,
    /// Optimal expected revenue of the bundling strategy.
    pub bundle_revenue: f64,
}

/// Range of `phi` over the distribution's bracket.
pub fn virtual_valuation_range(dist: &ShockDistribution) -> (f64, f64) {
    let (lo, hi) = dist.bracket();
    let (lo, hi) = shrink(lo, hi);
    (
        dist.virtual_valuation(lo).unwrap_or(f64::NEG_INFINITY),
        dist.virtual_valuation(hi).unwrap_or(f64::INFINITY),
    )
}

fn shrink(lo: f64, hi: f64) -> (f64, f64) {
    let eps = 1e-12 * (hi - lo);
    (lo + eps, hi - eps)
}

/// `phi^{-1}(y)` by bisection on the distribution bracket (closed form for
/// uniform shocks).
pub fn virtual_valuation_inverse(dist: &ShockDistribution, y: f64) -> Result<f64, PricingError> {
    let (phi_lo, phi_hi) = virtual_valuation_range(dist);
    if !(y >= phi_lo && y <= phi_hi) {
        return Err(PricingError::Bracket { target: y, lo: phi_lo, hi: phi_hi });
    }
    if let Some(z) = dist.virtual_valuation_inverse_closed(y) {
        return Ok(z);
    }
    let (mut a, mut b) = shrink(dist.bracket().0, dist.bracket().1);
    for _ in 0..BISECTION_MAX_ITER {
        let m = 0.5 * (a + b);
        // Positive density on the bracket interior.
        let phi = dist.virtual_valuation(m).unwrap_or(f64::NAN);
        if phi < y {
            a = m;
        } else {
            b = m;
        }
        if b - a <= BISECTION_TOL {
            break;
        }
    }
    Ok(0.5 * (a + b))
}

/// `g(v) = v + phi^{-1}(-v)`.
pub fn g_fn(dist: &ShockDistribution, v: f64) -> Result<f64, PricingError> {
    Ok(v + virtual_valuation_inverse(dist, -v)?)
}

/// Interval of valuations for which `g` is defined.
pub fn g_domain(dist: &ShockDistribution) -> (f64, f64) {
    let (phi_lo, phi_hi) = virtual_valuation_range(dist);
    (-phi_hi, -phi_lo)
}

pub fn optimal_price_single(dist: &ShockDistribution, v: f64, bx: &PriceBox) -> Result<ClippedPrice, PricingError> {
    Ok(bx.clip(g_fn(dist, v)?))
}

/// Unconstrained focal price `g_f(v_f + r_a) - r_a`.
pub fn focal_price_unconstrained(dist_f: &ShockDistribution, v_f: f64, r_a: f64) -> Result<f64, PricingError> {
    if r_a < 0.0 {
        return Err(PricingError::NegativeAncillaryRevenue(r_a));
    }
    Ok(g_fn(dist_f, v_f + r_a)? - r_a)
}

pub fn optimal_price_focal(
    dist_f: &ShockDistribution,
    v_f: f64,
    r_a: f64,
    bx: &PriceBox,
) -> Result<ClippedPrice, PricingError> {
    Ok(bx.clip(focal_price_unconstrained(dist_f, v_f, r_a)?))
}

/// `r(v) = g(v) (1 - F(g(v) - v))`, unconstrained.
pub fn optimal_revenue_single(dist: &ShockDistribution, v: f64) -> Result<f64, PricingError> {
    let p = g_fn(dist, v)?;
    Ok(p * dist.sf(p - v))
}

/// Best expected revenue for a single item with prices restricted to the box.
pub fn box_optimal_revenue_single(dist: &ShockDistribution, v: f64, bx: &PriceBox) -> Result<f64, PricingError> {
    let p = optimal_price_single(dist, v, bx)?.price;
    Ok(p * dist.sf(p - v))
}

/// Best unbundled revenue inside the box: ancillary priced optimally first,
/// then the focal price given the resulting ancillary revenue.
pub fn box_optimal_revenue_unbundled(
    dist_f: &ShockDistribution,
    dist_a: &ShockDistribution,
    v_f: f64,
    v_a: f64,
    bx: &PriceBox,
) -> Result<f64, PricingError> {
    let r_a = box_optimal_revenue_single(dist_a, v_a, bx)?;
    let p_f = optimal_price_focal(dist_f, v_f, r_a, bx)?.price;
    Ok((p_f + r_a) * dist_f.sf(p_f - v_f))
}

/// Unconstrained optimal unbundled revenue `r_f(v_f + r_a(v_a))`.
pub fn optimal_revenue_unbundled(
    dist_f: &ShockDistribution,
    dist_a: &ShockDistribution,
    v_f: f64,
    v_a: f64,
) -> Result<f64, PricingError> {
    optimal_revenue_single(dist_f, v_f + optimal_revenue_single(dist_a, v_a)?)
}

pub fn expected_revenue_unbundled(
    dist_f: &ShockDistribution,
    dist_a: &ShockDistribution,
    p_f: f64,
    p_a: f64,
    v_f: f64,
    v_a: f64,
) -> f64 {
    (p_f + p_a * dist_a.sf(p_a - v_a)) * dist_f.sf(p_f - v_f)
}

pub fn expected_revenue_bundled(dist_b: &ShockDistribution, p_b: f64, v_b: f64) -> f64 {
    p_b * dist_b.sf(p_b - v_b)
}

/// Clairvoyant strategy and prices at known valuations, with `v_b = v_f + v_a`.
/// Ties go to unbundling.
pub fn optimal_strategy(
    dist_f: &ShockDistribution,
    dist_a: &ShockDistribution,
    dist_b: &ShockDistribution,
    v_f: f64,
    v_a: f64,
    bx: &PriceBox,
) -> Result<RevenueQuote, PricingError> {
    let p_a = optimal_price_single(dist_a, v_a, bx)?.price;
    let r_a = p_a * dist_a.sf(p_a - v_a);
    let p_f = optimal_price_focal(dist_f, v_f, r_a, bx)?.price;
    let unbundle_revenue = expected_revenue_unbundled(dist_f, dist_a, p_f, p_a, v_f, v_a);
    let v_b = v_f + v_a;
    let p_b = optimal_price_single(dist_b, v_b, bx)?.price;
    let bundle_revenue = expected_revenue_bundled(dist_b, p_b, v_b);
    Ok(if bundle_revenue > unbundle_revenue {
        RevenueQuote {
            strategy: Strategy::Bundle,
            p_f: None,
            p_a: None,
            p_b: Some(p_b),
            expected_revenue: bundle_revenue,
            unbundle_revenue,
            bundle_revenue,
        }
    } else {
        RevenueQuote {
            strategy: Strategy::Unbundle,
            p_f: Some(p_f),
            p_a: Some(p_a),
            p_b: None,
            expected_revenue: unbundle_revenue,
            unbundle_revenue,
            bundle_revenue,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::{prop_assert, prop_oneof, proptest};
    use proptest::strategy::Strategy as _;

    fn u22() -> ShockDistribution {
        ShockDistribution::uniform(-2.0, 2.0).unwrap()
    }

    fn bx() -> PriceBox {
        PriceBox::new(0.1, 2.0).unwrap()
    }

    /// Brute-force argmax of `revenue(p)` on an `n`-point grid.
    fn grid_argmax(lo: f64, hi: f64, n: usize, revenue: impl Fn(f64) -> f64) -> (f64, f64) {
        let mut best = (lo, f64::NEG_INFINITY);
        for i in 0..n {
            let p = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            let r = revenue(p);
            if r > best.1 {
                best = (p, r);
            }
        }
        best
    }

    #[test]
    fn g_examples_uniform() {
        assert_relative_eq!(g_fn(&u22(), 0.0).unwrap(), 1.0);
        assert_relative_eq!(g_fn(&u22(), 0.5).unwrap(), 1.25);
    }

    #[test]
    fn g_normal_solves_first_order_condition() {
        let n = ShockDistribution::normal(0.0, 1.0).unwrap();
        let p = g_fn(&n, 0.0).unwrap();
        assert!((p * n.pdf(p) - n.sf(p)).abs() < 1e-9);
        let (gp, _) = grid_argmax(0.0, 3.0, 3_000_001, |q| q * n.sf(q));
        assert!((p - gp).abs() < 1e-6, "{p} vs {gp}");
    }

    #[test]
    fn g_out_of_bracket_is_an_error() {
        // phi ranges over [-6, 2] for U(-2, 2).
        assert!(matches!(g_fn(&u22(), 7.0), Err(PricingError::Bracket { .. })));
        assert!(matches!(g_fn(&u22(), -3.0), Err(PricingError::Bracket { .. })));
    }

    #[test]
    fn single_price_examples() {
        let p = optimal_price_single(&u22(), 0.0, &bx()).unwrap();
        assert_relative_eq!(p.price, 1.0);
        assert!(!p.clipped);
        let (gp, _) = grid_argmax(0.1, 2.0, 100_000, |q| q * u22().sf(q));
        assert!((p.price - gp).abs() < 1e-4);
        let tight = PriceBox::new(0.1, 0.8).unwrap();
        let p = optimal_price_single(&u22(), 0.0, &tight).unwrap();
        assert_eq!(p.price, 0.8);
        assert!(p.clipped);
    }

    #[test]
    fn focal_price_examples() {
        let p = optimal_price_focal(&u22(), 0.0, 0.25, &bx()).unwrap();
        assert_relative_eq!(p.price, 0.875);
        assert_relative_eq!(optimal_price_focal(&u22(), 0.0, 0.0, &bx()).unwrap().price, 1.0);
        let (gp, _) = grid_argmax(0.1, 2.0, 100_000, |q| (q + 0.25) * u22().sf(q));
        assert!((p.price - gp).abs() < 1e-4);
        assert!(optimal_price_focal(&u22(), 0.0, -0.1, &bx()).is_err());
    }

    #[test]
    fn revenue_examples() {
        assert_relative_eq!(optimal_revenue_single(&u22(), 0.0).unwrap(), 0.25);
        assert_relative_eq!(optimal_revenue_single(&u22(), 2.0).unwrap(), 1.0);
        let h = 1e-6;
        let slope = (optimal_revenue_single(&u22(), h).unwrap() - optimal_revenue_single(&u22(), -h).unwrap()) / (2.0 * h);
        assert!((slope - 0.25).abs() < 1e-6);
    }

    #[test]
    fn expected_revenue_examples() {
        let r = expected_revenue_unbundled(&u22(), &u22(), 0.875, 1.0, 0.0, 0.0);
        assert_relative_eq!(r, 0.316_406_25, epsilon = 1e-15);
        assert_eq!(expected_revenue_unbundled(&u22(), &u22(), 2.0, 1.0, 0.0, 0.0), 0.0);
        assert_relative_eq!(expected_revenue_bundled(&u22(), 1.0, 0.0), 0.25);
        // F = 0 at p_b = v_b + lo: certain purchase.
        assert_relative_eq!(expected_revenue_bundled(&u22(), 0.5, 2.5), 0.5);
        let p = optimal_price_single(&u22(), 0.3, &bx()).unwrap().price;
        let (_, best) = grid_argmax(0.1, 2.0, 100_000, |q| expected_revenue_bundled(&u22(), q, 0.3));
        assert!(expected_revenue_bundled(&u22(), p, 0.3) >= best - 1e-12);
    }

    #[test]
    fn expected_revenue_matches_monte_carlo() {
        use rand::SeedableRng;
        let (df, da) = (u22(), ShockDistribution::logistic(0.0, 0.7).unwrap());
        let (p_f, p_a, v_f, v_a) = (0.8, 0.6, 0.2, -0.1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let mut r = 0.0;
            if v_f + df.sample(&mut rng) >= p_f {
                r += p_f;
                if v_a + da.sample(&mut rng) >= p_a {
                    r += p_a;
                }
            }
            s += r;
            s2 += r * r;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        let exact = expected_revenue_unbundled(&df, &da, p_f, p_a, v_f, v_a);
        assert!((mean - exact).abs() <= 3.0 * se, "{mean} vs {exact} (se {se})");
    }

    #[test]
    fn strategy_examples() {
        let q = optimal_strategy(&u22(), &u22(), &u22(), 0.0, 0.0, &bx()).unwrap();
        assert_eq!(q.strategy, Strategy::Unbundle);
        assert_relative_eq!(q.expected_revenue, 0.316_406_25, epsilon = 1e-12);
        assert_relative_eq!(q.bundle_revenue, 0.25, epsilon = 1e-12);
        assert_eq!(q.p_b, None);

        // A low-variance bundle shock and a high valuation make bundling win;
        // confirmed against grid search over both mechanisms.
        let tight = ShockDistribution::uniform(-0.5, 0.5).unwrap();
        let q = optimal_strategy(&u22(), &u22(), &tight, 0.5, 0.5, &bx()).unwrap();
        assert_eq!(q.strategy, Strategy::Bundle);
        let (_, rb) = grid_argmax(0.1, 2.0, 100_000, |p| expected_revenue_bundled(&tight, p, 1.0));
        let mut ru: f64 = 0.0;
        for i in 0..400 {
            let p_f = 0.1 + 1.9 * i as f64 / 399.0;
            let (_, r) = grid_argmax(0.1, 2.0, 400, |p_a| expected_revenue_unbundled(&u22(), &u22(), p_f, p_a, 0.5, 0.5));
            ru = ru.max(r);
        }
        assert!(rb > ru);
        assert!((q.expected_revenue - rb).abs() < 1e-6);
    }

    #[test]
    fn strategy_tie_goes_to_unbundle() {
        // U(-1.75, 2.25) bundle shock at v_b = 0 earns 1.125 * 0.28125, the same
        // binary-exact value as the unbundled optimum at v_f = v_a = 0.
        let shifted = ShockDistribution::uniform(-1.75, 2.25).unwrap();
        let q = optimal_strategy(&u22(), &u22(), &shifted, 0.0, 0.0, &bx()).unwrap();
        assert_eq!(q.unbundle_revenue, q.bundle_revenue);
        assert_eq!(q.strategy, Strategy::Unbundle);
    }

    #[test]
    fn focal_first_order_condition_holds() {
        let dists = [u22(), ShockDistribution::normal(0.1, 0.9).unwrap(), ShockDistribution::logistic(0.0, 0.6).unwrap()];
        for d in &dists {
            for &(v_f, r_a) in &[(0.0, 0.2), (-0.3, 0.5), (0.4, 0.05)] {
                let p = focal_price_unconstrained(d, v_f, r_a).unwrap();
                let foc = d.virtual_valuation(p - v_f).unwrap() + v_f + r_a;
                assert!(foc.abs() < 1e-8, "foc = {foc}");
            }
        }
    }

    fn any_dist() -> impl proptest::strategy::Strategy<Value = ShockDistribution> {
        prop_oneof![
            (1.6f64..4.0).prop_map(|w| ShockDistribution::uniform(-w, w).unwrap()),
            (0.3f64..2.0).prop_map(|s| ShockDistribution::normal(0.0, s).unwrap()),
            (0.2f64..1.5).prop_map(|s| ShockDistribution::logistic(0.0, s).unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn g_slope_in_unit_interval(d in any_dist(), v in -1.0f64..1.0) {
            let h = 1e-4;
            let s = (g_fn(&d, v + h).unwrap() - g_fn(&d, v - h).unwrap()) / (2.0 * h);
            prop_assert!(s > 0.0 && s < 1.0);
        }

        #[test]
        fn revenue_is_one_lipschitz(d in any_dist(), v in -1.0f64..1.0, w in -1.0f64..1.0) {
            let (a, b) = (optimal_revenue_single(&d, v).unwrap(), optimal_revenue_single(&d, w).unwrap());
            prop_assert!((a - b).abs() <= (v - w).abs() + 1e-9);
        }

        #[test]
        fn focal_price_monotone(d in any_dist(), v in -0.8f64..0.8, r in 0.0f64..0.6, dv in 0.01f64..0.2) {
            let base = focal_price_unconstrained(&d, v, r).unwrap();
            prop_assert!(focal_price_unconstrained(&d, v + dv, r).unwrap() > base);
            prop_assert!(focal_price_unconstrained(&d, v, r + dv).unwrap() < base);
        }
    }
}
