//! Theoretical regret bounds, used as reference overlays.
//!
//! These are orders of magnitude above observed regret for realistic
//! instances, since they scale with the squared worst-case radius.

use serde::{Deserialize, Serialize};

use crate::mle::beta_bar;
use crate::policies::PolicyKind;
use crate::shock_dist::ShockConstants;

fn log_ratio(d: f64, t: f64) -> f64 {
    ((d + t) / d).ln()
}

/// Worst-case bound for Alg1 (any feature sequence).
pub fn alg1_worst_bound(d: usize, t: usize, p_high: f64, eta: f64, beta_bar: f64) -> f64 {
    let (d, t) = (d as f64, t as f64);
    let l = log_ratio(d, t);
    2.0 * p_high + 6.0 * 2f64.sqrt() * beta_bar * (d * t * l).sqrt() + 2.0 * d * eta * beta_bar.powi(2) * l
}

/// Bound for Alg1 under i.i.d. features with focal purchase rate `q_star`.
pub fn alg1_iid_bound(d: usize, t: usize, p_high: f64, eta: f64, beta_bar: f64, q_star: f64) -> f64 {
    let (d, t) = (d as f64, t as f64);
    2.0 * p_high + 288.0 * d * eta * beta_bar.powi(2) / q_star * ((d + t + 1.0) / d).ln()
}

/// Bound for Alg2: bad event, strategy regret, then pricing regret in
/// unbundled and bundled periods.
pub fn alg2_bound(d: usize, t: usize, p_high: f64, eta: f64, beta_bar: f64) -> f64 {
    let (d, t) = (d as f64, t as f64);
    let l = log_ratio(d, t);
    let root = (d * t * l).sqrt();
    6.0 * p_high
        + 24.0 * beta_bar * root
        + 6.0 * 2f64.sqrt() * beta_bar * root
        + 2.0 * d * eta * beta_bar.powi(2) * l
        + 2.0 * d * eta * beta_bar.powi(2) * l
}

/// Bound for Alg3 under i.i.d. features.
pub fn alg3_bound(d: usize, t: usize, p_high: f64, eta: f64, beta_bar: f64, q_star: f64) -> f64 {
    let (d, t) = (d as f64, t as f64);
    let l = log_ratio(d, t);
    22.0 * p_high
        + 16.0 * p_high * (t * t.ln()).sqrt()
        + 8.0 * p_high * (2.0 * d * t / q_star * l).sqrt()
        + 6.0 * 2f64.sqrt() * beta_bar * (d * t * l).sqrt()
        + 4.0 * d * eta * beta_bar.powi(2) * l
}

/// Bound curves for one instance; the radius is recomputed at each horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalBounds {
    pub dim: usize,
    pub p_high: f64,
    pub theta_bar: f64,
    pub lambda: f64,
    pub constants: ShockConstants,
    pub q_star: Option<f64>,
}

impl TheoreticalBounds {
    pub fn beta_bar(&self, t: usize) -> f64 {
        beta_bar(self.dim, t, self.lambda, self.theta_bar, &self.constants)
    }

    pub fn alg1_worst(&self, t: usize) -> f64 {
        alg1_worst_bound(self.dim, t, self.p_high, self.constants.eta, self.beta_bar(t))
    }

    pub fn alg1_iid(&self, t: usize) -> Option<f64> {
        self.q_star.map(|q| alg1_iid_bound(self.dim, t, self.p_high, self.constants.eta, self.beta_bar(t), q))
    }

    pub fn alg2(&self, t: usize) -> f64 {
        alg2_bound(self.dim, t, self.p_high, self.constants.eta, self.beta_bar(t))
    }

    pub fn alg3(&self, t: usize) -> Option<f64> {
        self.q_star.map(|q| alg3_bound(self.dim, t, self.p_high, self.constants.eta, self.beta_bar(t), q))
    }

    /// The tightest applicable bound for a policy, if any.
    pub fn for_policy(&self, kind: PolicyKind, t: usize) -> Option<f64> {
        match kind {
            PolicyKind::Alg1 => Some(self.alg1_iid(t).map_or(self.alg1_worst(t), |b| b.min(self.alg1_worst(t)))),
            PolicyKind::Alg2 => Some(self.alg2(t)),
            PolicyKind::Alg3 => self.alg3(t),
            PolicyKind::Greedy | PolicyKind::Oracle => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn worst_case_spot_check() {
        // By hand: l = ln(51), 6 sqrt2 * 203.5 * sqrt(200 l) + 4 * 0.25 * 203.5^2 * l + 2.
        let l = 51f64.ln();
        let want = 2.0 + 6.0 * 2f64.sqrt() * 203.5 * (200.0 * l).sqrt() + 203.5f64.powi(2) * l;
        assert_relative_eq!(alg1_worst_bound(2, 100, 1.0, 0.25, 203.5), want, max_relative = 1e-12);
        assert!((alg1_worst_bound(2, 100, 1.0, 0.25, 203.5) - 211_249.752_866_09).abs() < 1e-6);
    }

    #[test]
    fn curves_are_nonnegative_and_nondecreasing() {
        let b = TheoreticalBounds {
            dim: 2,
            p_high: 1.0,
            theta_bar: 0.5,
            lambda: 1.0,
            constants: ShockConstants { nu: 1.0 / 12.25, mu: 2.0, b_max: 0.25, b_prime_max: 0.0, eta: 0.25, working_lo: -1.5, working_hi: 1.5 },
            q_star: Some(0.3),
        };
        let mut prev = [0.0; 4];
        for t in [1, 2, 10, 100, 1000, 10_000, 100_000] {
            let now = [b.alg1_worst(t), b.alg1_iid(t).unwrap(), b.alg2(t), b.alg3(t).unwrap()];
            for (p, n) in prev.iter().zip(&now) {
                assert!(*n >= 0.0 && n >= p);
            }
            prev = now;
        }
        assert!(b.for_policy(PolicyKind::Oracle, 10).is_none());
    }
}
