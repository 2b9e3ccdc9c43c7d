//! Utility-shock distributions.
//!
//! Every customer valuation in the model is a deterministic linear part plus a
//! random shock drawn from a known law. Pricing, likelihood and confidence
//! radii all consume the same handful of quantities from that law: the CDF,
//! survival function, density and its derivative, the virtual valuation, and
//! the curvature constants `nu` / `mu` together with the density bounds
//! `B` / `B'`.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShockError {
    #[error("invalid distribution parameters: {0}")]
    InvalidParameters(String),
    #[error("density vanishes at v = {0}")]
    ZeroDensity(f64),
    #[error("validation failed at v = {at}: {reason}")]
    Validation { at: f64, reason: String },
    #[error("unknown distribution kind `{0}`")]
    UnknownKind(String),
}

/// Tabulated law, used for numerically convolved bundle shocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ShockTable {
    lo: f64,
    step: f64,
    cdf: Vec<f64>,
    pdf: Vec<f64>,
    pdf_prime: Vec<f64>,
}

impl ShockTable {
    fn hi(&self) -> f64 {
        self.lo + self.step * (self.cdf.len() - 1) as f64
    }

    fn interp(&self, table: &[f64], v: f64, below: f64, above: f64) -> f64 {
        if v <= self.lo {
            return below;
        }
        let pos = (v - self.lo) / self.step;
        let i = pos.floor() as usize;
        if i + 1 >= table.len() {
            return above;
        }
        let w = pos - i as f64;
        table[i] * (1.0 - w) + table[i + 1] * w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ShockKind {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
    Logistic { loc: f64, scale: f64 },
    Tabulated(Arc<ShockTable>),
}

/// A log-concave utility-shock law.
#[derive(Debug, Clone, PartialEq)]
pub struct ShockDistribution {
    kind: ShockKind,
}

/// Config-file representation: `{ kind = "uniform", params = [-2.0, 2.0] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShockRecord {
    pub kind: String,
    pub params: Vec<f64>,
}

impl TryFrom<&ShockRecord> for ShockDistribution {
    type Error = ShockError;

    fn try_from(rec: &ShockRecord) -> Result<Self, ShockError> {
        let want = |n: usize| {
            if rec.params.len() == n {
                Ok(())
            } else {
                Err(ShockError::InvalidParameters(format!(
                    "`{}` takes {n} parameters, got {}",
                    rec.kind,
                    rec.params.len()
                )))
            }
        };
        match rec.kind.to_ascii_lowercase().as_str() {
            "uniform" => {
                want(2)?;
                Self::uniform(rec.params[0], rec.params[1])
            }
            "normal" | "gaussian" => {
                want(2)?;
                Self::normal(rec.params[0], rec.params[1])
            }
            "logistic" => {
                want(2)?;
                Self::logistic(rec.params[0], rec.params[1])
            }
            other => Err(ShockError::UnknownKind(other.to_string())),
        }
    }
}

impl ShockDistribution {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self, ShockError> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(ShockError::InvalidParameters(format!(
                "uniform requires lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self { kind: ShockKind::Uniform { lo, hi } })
    }

    pub fn normal(mean: f64, sd: f64) -> Result<Self, ShockError> {
        if !(mean.is_finite() && sd.is_finite() && sd > 0.0) {
            return Err(ShockError::InvalidParameters(format!(
                "normal requires sd > 0, got sd = {sd}"
            )));
        }
        Ok(Self { kind: ShockKind::Normal { mean, sd } })
    }

    pub fn logistic(loc: f64, scale: f64) -> Result<Self, ShockError> {
        if !(loc.is_finite() && scale.is_finite() && scale > 0.0) {
            return Err(ShockError::InvalidParameters(format!(
                "logistic requires scale > 0, got scale = {scale}"
            )));
        }
        Ok(Self { kind: ShockKind::Logistic { loc, scale } })
    }

    /// Law of the sum of two independent shocks.
    ///
    /// Normal summands convolve in closed form; anything else is tabulated on a
    /// `grid_n`-point grid by quadrature.
    pub fn convolve(a: &Self, b: &Self, grid_n: usize) -> Result<Self, ShockError> {
        if let (ShockKind::Normal { mean: m1, sd: s1 }, ShockKind::Normal { mean: m2, sd: s2 }) =
            (&a.kind, &b.kind)
        {
            return Self::normal(m1 + m2, (s1 * s1 + s2 * s2).sqrt());
        }
        if grid_n < 16 {
            return Err(ShockError::InvalidParameters("convolution grid too small".into()));
        }
        let (alo, ahi) = a.bracket();
        let (blo, bhi) = b.bracket();
        let (lo, hi) = (alo + blo, ahi + bhi);
        let step = (hi - lo) / (grid_n - 1) as f64;
        // Simpson over the support of `b`.
        let nodes = 2000usize;
        let h = (bhi - blo) / nodes as f64;
        let weights: Vec<(f64, f64)> = (0..=nodes)
            .map(|k| {
                let y = blo + h * k as f64;
                let w = if k == 0 || k == nodes {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                (y, w * h / 3.0 * b.pdf(y))
            })
            .collect();
        let mut cdf = Vec::with_capacity(grid_n);
        let mut pdf = Vec::with_capacity(grid_n);
        for i in 0..grid_n {
            let v = lo + step * i as f64;
            let (mut c, mut p) = (0.0, 0.0);
            for &(y, w) in &weights {
                c += w * a.cdf(v - y);
                p += w * a.pdf(v - y);
            }
            cdf.push(c.clamp(0.0, 1.0));
            pdf.push(p.max(0.0));
        }
        // Quadrature noise can break monotonicity by a few ulps.
        for i in 1..grid_n {
            if cdf[i] < cdf[i - 1] {
                cdf[i] = cdf[i - 1];
            }
        }
        let mut pdf_prime = vec![0.0; grid_n];
        for i in 0..grid_n {
            let (l, r) = (i.saturating_sub(1), (i + 1).min(grid_n - 1));
            pdf_prime[i] = (pdf[r] - pdf[l]) / (step * (r - l) as f64);
        }
        Ok(Self {
            kind: ShockKind::Tabulated(Arc::new(ShockTable { lo, step, cdf, pdf, pdf_prime })),
        })
    }

    pub fn kind(&self) -> &ShockKind {
        &self.kind
    }

    /// Config record for the closed-form kinds; `None` for tabulated laws.
    pub fn record(&self) -> Option<ShockRecord> {
        let (kind, params) = match self.kind {
            ShockKind::Uniform { lo, hi } => ("uniform", vec![lo, hi]),
            ShockKind::Normal { mean, sd } => ("normal", vec![mean, sd]),
            ShockKind::Logistic { loc, scale } => ("logistic", vec![loc, scale]),
            ShockKind::Tabulated(_) => return None,
        };
        Some(ShockRecord { kind: kind.into(), params })
    }

    /// Interval on which the law is numerically meaningful. Bounded kinds
    /// return their support; unbounded kinds a wide symmetric window.
    pub fn bracket(&self) -> (f64, f64) {
        match &self.kind {
            ShockKind::Uniform { lo, hi } => (*lo, *hi),
            ShockKind::Normal { mean, sd } => (mean - 30.0 * sd, mean + 30.0 * sd),
            ShockKind::Logistic { loc, scale } => (loc - 50.0 * scale, loc + 50.0 * scale),
            ShockKind::Tabulated(t) => (t.lo, t.hi()),
        }
    }

    pub fn cdf(&self, v: f64) -> f64 {
        match &self.kind {
            ShockKind::Uniform { lo, hi } => ((v - lo) / (hi - lo)).clamp(0.0, 1.0),
            ShockKind::Normal { mean, sd } => 0.5 * erfc(-(v - mean) / (sd * SQRT_2)),
            ShockKind::Logistic { loc, scale } => logistic_fn((v - loc) / scale),
            ShockKind::Tabulated(t) => t.interp(&t.cdf, v, 0.0, 1.0),
        }
    }

    /// Survival function `1 - F(v)`, evaluated without cancellation where possible.
    pub fn sf(&self, v: f64) -> f64 {
        match &self.kind {
            ShockKind::Uniform { lo, hi } => ((hi - v) / (hi - lo)).clamp(0.0, 1.0),
            ShockKind::Normal { mean, sd } => 0.5 * erfc((v - mean) / (sd * SQRT_2)),
            ShockKind::Logistic { loc, scale } => logistic_fn(-(v - loc) / scale),
            ShockKind::Tabulated(_) => 1.0 - self.cdf(v),
        }
    }

    pub fn pdf(&self, v: f64) -> f64 {
        match &self.kind {
            ShockKind::Uniform { lo, hi } => {
                if v >= *lo && v <= *hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            ShockKind::Normal { mean, sd } => {
                let u = (v - mean) / sd;
                (-0.5 * u * u).exp() / (sd * (2.0 * PI).sqrt())
            }
            ShockKind::Logistic { loc, scale } => {
                let u = (v - loc) / scale;
                logistic_fn(u) * logistic_fn(-u) / scale
            }
            ShockKind::Tabulated(t) => t.interp(&t.pdf, v, 0.0, 0.0),
        }
    }

    pub fn pdf_prime(&self, v: f64) -> f64 {
        match &self.kind {
            ShockKind::Uniform { .. } => 0.0,
            ShockKind::Normal { mean, sd } => -(v - mean) / (sd * sd) * self.pdf(v),
            ShockKind::Logistic { loc, scale } => {
                let u = (v - loc) / scale;
                self.pdf(v) * (logistic_fn(-u) - logistic_fn(u)) / scale
            }
            ShockKind::Tabulated(t) => t.interp(&t.pdf_prime, v, 0.0, 0.0),
        }
    }

    /// Supremum of the density over the whole line.
    pub fn max_density(&self) -> f64 {
        match &self.kind {
            ShockKind::Uniform { lo, hi } => 1.0 / (hi - lo),
            ShockKind::Normal { sd, .. } => 1.0 / (sd * (2.0 * PI).sqrt()),
            ShockKind::Logistic { scale, .. } => 0.25 / scale,
            ShockKind::Tabulated(t) => t.pdf.iter().cloned().fold(0.0, f64::max),
        }
    }

    /// `phi(v) = v - (1 - F(v)) / f(v)`.
    pub fn virtual_valuation(&self, v: f64) -> Result<f64, ShockError> {
        let f = self.pdf(v);
        if f <= 0.0 {
            return Err(ShockError::ZeroDensity(v));
        }
        Ok(v - self.sf(v) / f)
    }

    /// Closed-form inverse of the virtual valuation where one exists.
    pub(crate) fn virtual_valuation_inverse_closed(&self, y: f64) -> Option<f64> {
        match self.kind {
            // phi(v) = 2v - hi on the support.
            ShockKind::Uniform { hi, .. } => Some((y + hi) / 2.0),
            _ => None,
        }
    }

    /// `F^{-1}(u)` for `u` in `(0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
        match &self.kind {
            ShockKind::Uniform { lo, hi } => lo + u * (hi - lo),
            ShockKind::Normal { mean, sd } => mean - SQRT_2 * sd * erfc_inv(2.0 * u),
            ShockKind::Logistic { loc, scale } => loc + scale * (u / (1.0 - u)).ln(),
            ShockKind::Tabulated(t) => {
                let (mut a, mut b) = (t.lo, t.hi());
                for _ in 0..100 {
                    let m = 0.5 * (a + b);
                    if self.cdf(m) < u {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                0.5 * (a + b)
            }
        }
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        self.quantile(u)
    }

    /// `(-log F)'` and `(-log F)''` at `v`.
    pub fn neg_log_cdf_derivs(&self, v: f64) -> (f64, f64) {
        let (cdf, f, fp) = (self.cdf(v), self.pdf(v), self.pdf_prime(v));
        let h = f / cdf;
        (-h, h * h - fp / cdf)
    }

    /// `(-log(1-F))'` and `(-log(1-F))''` at `v`.
    pub fn neg_log_sf_derivs(&self, v: f64) -> (f64, f64) {
        let (sf, f, fp) = (self.sf(v), self.pdf(v), self.pdf_prime(v));
        let h = f / sf;
        (h, h * h + fp / sf)
    }

    /// Checks strict increase, positive density and log-concavity of both
    /// `F` and `1 - F` on `[lo, hi]`.
    pub fn validate_on(&self, lo: f64, hi: f64, grid_n: usize) -> Result<(), ShockError> {
        let (blo, bhi) = self.bracket();
        if let ShockKind::Uniform { .. } | ShockKind::Tabulated(_) = self.kind {
            if !(lo > blo && hi < bhi) {
                return Err(ShockError::Validation {
                    at: if lo <= blo { lo } else { hi },
                    reason: format!(
                        "working interval [{lo}, {hi}] must lie strictly inside the support ({blo}, {bhi})"
                    ),
                });
            }
        }
        let mut prev = f64::NEG_INFINITY;
        for v in grid(lo, hi, grid_n) {
            let c = self.cdf(v);
            if self.pdf(v) <= 0.0 {
                return Err(ShockError::Validation { at: v, reason: "density is zero".into() });
            }
            if c <= prev {
                return Err(ShockError::Validation { at: v, reason: "CDF is not strictly increasing".into() });
            }
            prev = c;
            let (_, d2f) = self.neg_log_cdf_derivs(v);
            let (_, d2s) = self.neg_log_sf_derivs(v);
            if !(d2f > 0.0 && d2s > 0.0) {
                return Err(ShockError::Validation {
                    at: v,
                    reason: format!("log-concavity violated: -(log F)'' = {d2f}, -(log(1-F))'' = {d2s}"),
                });
            }
        }
        Ok(())
    }
}

/// Curvature and density constants over a working interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShockConstants {
    pub nu: f64,
    pub mu: f64,
    pub b_max: f64,
    pub b_prime_max: f64,
    pub eta: f64,
    pub working_lo: f64,
    pub working_hi: f64,
}

impl ShockConstants {
    /// Worst case over several laws sharing the same working interval, as
    /// needed when focal, ancillary and bundle shocks differ.
    pub fn combine(parts: &[ShockConstants], p_high: f64) -> ShockConstants {
        let first = parts[0];
        let mut out = first;
        for c in &parts[1..] {
            out.nu = out.nu.min(c.nu);
            out.mu = out.mu.max(c.mu);
            out.b_max = out.b_max.max(c.b_max);
            out.b_prime_max = out.b_prime_max.max(c.b_prime_max);
        }
        out.eta = out.b_max + p_high * out.b_prime_max;
        out
    }
}

/// Working interval over which the constants are taken: `|v| <= p_high + theta_bar`.
pub fn working_interval(p_high: f64, theta_bar: f64) -> (f64, f64) {
    let w = p_high + theta_bar;
    (-w, w)
}

/// Computes `nu`, `mu`, `B`, `B'` and `eta` on the working interval.
///
/// Uniform and logistic laws use closed forms (the extremes sit at interval
/// endpoints or at known stationary points); other kinds use a `grid_n`-point
/// grid search.
pub fn compute_constants(
    dist: &ShockDistribution,
    p_low: f64,
    p_high: f64,
    theta_bar: f64,
    grid_n: usize,
) -> Result<ShockConstants, ShockError> {
    if grid_n < 1000 {
        return Err(ShockError::InvalidParameters(format!("grid_n must be >= 1000, got {grid_n}")));
    }
    if !(p_low > 0.0 && p_low < p_high && theta_bar > 0.0) {
        return Err(ShockError::InvalidParameters(format!(
            "need 0 < p_low < p_high and theta_bar > 0, got p_low = {p_low}, p_high = {p_high}, theta_bar = {theta_bar}"
        )));
    }
    let (lo, hi) = working_interval(p_high, theta_bar);
    dist.validate_on(lo, hi, grid_n)?;
    let (nu, mu, b_max, b_prime_max) = match dist.kind {
        ShockKind::Uniform { lo: a, hi: b } => {
            // -(log F)'' = 1/(v-a)^2, -(log(1-F))'' = 1/(b-v)^2.
            let nu = (1.0 / (hi - a).powi(2)).min(1.0 / (b - lo).powi(2));
            let mu = (1.0 / (lo - a)).max(1.0 / (b - hi));
            (nu, mu, 1.0 / (b - a), 0.0)
        }
        ShockKind::Logistic { loc, scale } => {
            let fs = |v: f64| {
                let u = (v - loc) / scale;
                logistic_fn(u) * logistic_fn(-u)
            };
            let nu = fs(lo).min(fs(hi)) / (scale * scale);
            let mu = logistic_fn((hi - loc) / scale).max(logistic_fn(-(lo - loc) / scale)) / scale;
            let peak = loc.clamp(lo, hi);
            // |f'| peaks where |u| = ln(2 + sqrt 3).
            let u_star = (2.0 + 3f64.sqrt()).ln() * scale;
            let mut bp = dist.pdf_prime(lo).abs().max(dist.pdf_prime(hi).abs());
            for v in [loc - u_star, loc + u_star] {
                if v >= lo && v <= hi {
                    bp = bp.max(dist.pdf_prime(v).abs());
                }
            }
            (nu, mu, dist.pdf(peak), bp)
        }
        _ => {
            let mut nu = f64::INFINITY;
            let mut mu: f64 = 0.0;
            let mut b: f64 = 0.0;
            let mut bp: f64 = 0.0;
            for v in grid(lo, hi, grid_n) {
                let (d1f, d2f) = dist.neg_log_cdf_derivs(v);
                let (d1s, d2s) = dist.neg_log_sf_derivs(v);
                nu = nu.min(d2f).min(d2s);
                mu = mu.max(d1f.abs()).max(d1s.abs());
                b = b.max(dist.pdf(v));
                bp = bp.max(dist.pdf_prime(v).abs());
            }
            (nu, mu, b, bp)
        }
    };
    if !(nu > 0.0) {
        return Err(ShockError::Validation { at: hi, reason: format!("non-positive curvature nu = {nu}") });
    }
    Ok(ShockConstants {
        nu,
        mu,
        b_max,
        b_prime_max,
        eta: b_max + p_high * b_prime_max,
        working_lo: lo,
        working_hi: hi,
    })
}

#[inline]
fn logistic_fn(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let step = (hi - lo) / (n.max(2) - 1) as f64;
    (0..n.max(2)).map(move |i| if i + 1 == n.max(2) { hi } else { lo + step * i as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn u22() -> ShockDistribution {
        ShockDistribution::uniform(-2.0, 2.0).unwrap()
    }

    fn all_kinds() -> Vec<ShockDistribution> {
        vec![
            u22(),
            ShockDistribution::normal(0.0, 1.0).unwrap(),
            ShockDistribution::logistic(0.0, 1.0).unwrap(),
        ]
    }

    #[test]
    fn cdf_examples() {
        assert_relative_eq!(u22().cdf(1.0), 0.75);
        assert_eq!(u22().cdf(-2.0), 0.0);
        assert_relative_eq!(ShockDistribution::logistic(0.0, 1.0).unwrap().cdf(0.0), 0.5);
    }

    #[test]
    fn pdf_examples() {
        assert_relative_eq!(u22().pdf(0.0), 0.25);
        assert_eq!(u22().pdf_prime(0.0), 0.0);
        assert_relative_eq!(ShockDistribution::normal(0.0, 1.0).unwrap().pdf(0.0), 0.398_942_280_4, epsilon = 1e-9);
        assert_relative_eq!(ShockDistribution::logistic(0.0, 1.0).unwrap().pdf(0.0), 0.25);
    }

    #[test]
    fn virtual_valuation_examples() {
        assert_relative_eq!(u22().virtual_valuation(0.0).unwrap(), -2.0);
        assert_relative_eq!(u22().virtual_valuation(1.0).unwrap(), 0.0);
        let lg = ShockDistribution::logistic(0.0, 1.0).unwrap();
        assert_relative_eq!(lg.virtual_valuation(0.0).unwrap(), -2.0, epsilon = 1e-12);
        assert!(matches!(u22().virtual_valuation(3.0), Err(ShockError::ZeroDensity(_))));
    }

    #[test]
    fn quantile_examples() {
        assert_relative_eq!(u22().quantile(0.9), 1.6, epsilon = 1e-12);
        assert_relative_eq!(u22().quantile(0.5), 0.0);
        assert_relative_eq!(ShockDistribution::logistic(0.0, 1.0).unwrap().quantile(0.5), 0.0);
        let n = ShockDistribution::normal(0.0, 1.0).unwrap();
        assert_relative_eq!(n.quantile(0.975), 1.959_963_985, epsilon = 1e-8);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        for d in all_kinds() {
            let mut a = ChaCha8Rng::seed_from_u64(7);
            let mut b = ChaCha8Rng::seed_from_u64(7);
            for _ in 0..100 {
                assert_eq!(d.sample(&mut a), d.sample(&mut b));
            }
        }
    }

    #[test]
    fn uniform_constants_match_closed_form() {
        let c = compute_constants(&u22(), 0.1, 1.0, 0.5, 10_000).unwrap();
        assert_relative_eq!(c.nu, 1.0 / 3.5f64.powi(2), epsilon = 1e-12);
        assert_relative_eq!(c.mu, 2.0, epsilon = 1e-12);
        assert_relative_eq!(c.b_max, 0.25);
        assert_eq!(c.b_prime_max, 0.0);
        assert_relative_eq!(c.eta, 0.25);
    }

    #[test]
    fn analytic_constants_agree_with_grid_search() {
        // Grid search over the same interval is an independent route.
        for d in all_kinds() {
            let c = compute_constants(&d, 0.1, 1.0, 0.5, 10_000).unwrap();
            let (mut nu, mut mu, mut b, mut bp) = (f64::INFINITY, 0f64, 0f64, 0f64);
            for v in grid(-1.5, 1.5, 100_001) {
                let (d1f, d2f) = d.neg_log_cdf_derivs(v);
                let (d1s, d2s) = d.neg_log_sf_derivs(v);
                nu = nu.min(d2f).min(d2s);
                mu = mu.max(d1f.abs()).max(d1s.abs());
                b = b.max(d.pdf(v));
                bp = bp.max(d.pdf_prime(v).abs());
            }
            assert_relative_eq!(c.nu, nu, max_relative = 1e-6);
            assert_relative_eq!(c.mu, mu, max_relative = 1e-6);
            assert_relative_eq!(c.b_max, b, max_relative = 1e-6);
            assert!((c.b_prime_max - bp).abs() <= 1e-6 * bp.max(1.0));
            assert_eq!(c.eta, c.b_max + 1.0 * c.b_prime_max);
        }
    }

    #[test]
    fn grid_refinement_changes_constants_by_under_one_percent() {
        let n = ShockDistribution::normal(0.2, 0.8).unwrap();
        let coarse = compute_constants(&n, 0.1, 1.0, 0.5, 1000).unwrap();
        let fine = compute_constants(&n, 0.1, 1.0, 0.5, 10_000).unwrap();
        for (a, b) in [
            (coarse.nu, fine.nu),
            (coarse.mu, fine.mu),
            (coarse.b_max, fine.b_max),
            (coarse.b_prime_max, fine.b_prime_max),
        ] {
            assert!((a - b).abs() <= 0.01 * b.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn normal_constants_are_positive() {
        let c = compute_constants(&ShockDistribution::normal(0.0, 1.0).unwrap(), 0.1, 1.0, 0.5, 1000).unwrap();
        assert!(c.nu > 0.0 && c.mu > 0.0);
    }

    #[test]
    fn rejects_support_too_narrow_for_working_interval() {
        let d = ShockDistribution::uniform(-1.0, 1.0).unwrap();
        assert!(matches!(
            compute_constants(&d, 0.1, 1.0, 0.5, 1000),
            Err(ShockError::Validation { .. })
        ));
        assert!(compute_constants(&u22(), 0.1, 1.0, 0.5, 999).is_err());
    }

    #[test]
    fn bad_parameters_rejected() {
        assert!(ShockDistribution::uniform(1.0, 1.0).is_err());
        assert!(ShockDistribution::normal(0.0, 0.0).is_err());
        assert!(ShockDistribution::logistic(0.0, -1.0).is_err());
        let rec = ShockRecord { kind: "cauchy".into(), params: vec![0.0, 1.0] };
        assert!(matches!(ShockDistribution::try_from(&rec), Err(ShockError::UnknownKind(_))));
        let rec = ShockRecord { kind: "uniform".into(), params: vec![0.0] };
        assert!(ShockDistribution::try_from(&rec).is_err());
    }

    #[test]
    fn finite_differences_match_density_on_grid() {
        for d in all_kinds() {
            let mut prev_cdf = f64::NEG_INFINITY;
            let mut prev_phi = f64::NEG_INFINITY;
            for v in grid(-1.5, 1.5, 1000) {
                let h = 1e-5;
                let fd_pdf = (d.cdf(v + h) - d.cdf(v - h)) / (2.0 * h);
                assert!((fd_pdf - d.pdf(v)).abs() <= 1e-6 * d.pdf(v).max(1e-3), "pdf at {v}");
                let fd_pp = (d.pdf(v + h) - d.pdf(v - h)) / (2.0 * h);
                assert!((fd_pp - d.pdf_prime(v)).abs() <= 1e-4 * d.pdf_prime(v).abs().max(1e-2), "pdf' at {v}");
                let c = d.cdf(v);
                assert!(c > prev_cdf);
                prev_cdf = c;
                let phi = d.virtual_valuation(v).unwrap();
                assert!(phi > prev_phi);
                prev_phi = phi;
            }
        }
    }

    #[test]
    fn curvature_dominates_nu_on_grid() {
        for d in all_kinds() {
            let c = compute_constants(&d, 0.1, 1.0, 0.5, 10_000).unwrap();
            for v in grid(c.working_lo, c.working_hi, 1000) {
                assert!(d.neg_log_cdf_derivs(v).1 >= c.nu * (1.0 - 1e-12));
                assert!(d.neg_log_sf_derivs(v).1 >= c.nu * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn empirical_cdf_within_ks_distance() {
        for d in all_kinds() {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut xs: Vec<f64> = (0..100_000).map(|_| d.sample(&mut rng)).collect();
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = xs.len() as f64;
            let ks = xs
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let c = d.cdf(x);
                    (c - i as f64 / n).abs().max((c - (i + 1) as f64 / n).abs())
                })
                .fold(0.0, f64::max);
            assert!(ks < 0.02, "ks = {ks}");
        }
    }

    #[test]
    fn normal_convolution_is_closed_form() {
        let a = ShockDistribution::normal(0.0, 0.6).unwrap();
        let b = ShockDistribution::normal(0.5, 0.8).unwrap();
        let c = ShockDistribution::convolve(&a, &b, 10_000).unwrap();
        assert_eq!(c, ShockDistribution::normal(0.5, 1.0).unwrap());
    }

    #[test]
    fn tabulated_convolution_of_uniforms_is_triangular() {
        let a = u22();
        let c = ShockDistribution::convolve(&a, &a, 10_000).unwrap();
        // Sum of two U(-2,2) has density (4 - |v|)/16 on [-4, 4].
        for v in [-3.0, -1.0, 0.0, 0.5, 2.5] {
            assert!((c.pdf(v) - (4.0 - f64::abs(v)) / 16.0).abs() < 2e-3, "pdf at {v}");
            let exact = if v <= 0.0 { (4.0 + v).powi(2) / 32.0 } else { 1.0 - (4.0 - v).powi(2) / 32.0 };
            assert!((c.cdf(v) - exact).abs() < 2e-3, "cdf at {v}");
        }
        assert!(c.validate_on(-1.5, 1.5, 1000).is_ok());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mean: f64 = (0..20_000).map(|_| c.sample(&mut rng)).sum::<f64>() / 20_000.0;
        assert!(mean.abs() < 0.05);
    }
}
