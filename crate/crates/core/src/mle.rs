//! Regularized maximum-likelihood estimation and confidence ellipsoids.
//!
//! Each product (focal, ancillary, bundle) keeps its own [`EstimatorState`]:
//! the observations it has been fed, the design matrix
//! `Sigma = lambda I + sum x x^T`, and the current estimate `theta_hat`, the
//! minimizer over the ball `||theta|| <= theta_bar` of
//!
//! ```text
//! J(theta) = -LL(theta) + lambda * nu * ||theta||^2
//! ```
//!
//! The objective is strongly convex, so the solver (projected Newton with a
//! ball-constrained model step, falling back to projected gradient) is run to
//! a gradient-mapping norm of `1e-8`. The gradient and Hessian of the data
//! term at the last solution are cached, so a refit after appending
//! observations starts from exact derivatives without a full pass.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::shock_dist::{ShockConstants, ShockDistribution, ShockKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MleError {
    #[error("likelihood argument {z} leaves the domain where 0 < F < 1")]
    Domain { z: f64 },
    #[error("fit did not converge after {iterations} iterations (gradient mapping {gradient_mapping:e})")]
    Convergence { iterations: usize, gradient_mapping: f64 },
    #[error("feature has dimension {got}, estimator expects {want}")]
    Dimension { got: usize, want: usize },
    #[error("feature norm {0} exceeds 1")]
    FeatureNorm(f64),
    #[error("invalid estimator settings: {0}")]
    Settings(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProductTag {
    Focal,
    Ancillary,
    Bundle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    #[default]
    ProjectedNewton,
    ProjectedGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub solver: Solver,
    pub max_iter: usize,
    pub tol: f64,
    pub armijo: f64,
    pub shrink: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self { solver: Solver::ProjectedNewton, max_iter: 500, tol: 1e-8, armijo: 1e-4, shrink: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub iterations: usize,
    /// Number of full passes over the observations.
    pub passes: usize,
    pub gradient_mapping: f64,
}

/// One observation as seen by a single product's likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub price: f64,
    pub x: Vec<f64>,
    pub demand: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lcb: f64,
    pub ucb: f64,
}

impl ConfidenceInterval {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lcb && v <= self.ucb
    }
}

#[derive(Debug, Clone, Copy)]
enum Want {
    Value,
    Derivatives,
}

/// Data part of the objective, or its derivatives, at a point.
#[derive(Debug, Clone)]
struct DataTerms {
    value: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
    clamps: u64,
}

#[derive(Debug, Clone)]
struct Cache {
    n: usize,
    theta: Vec<f64>,
    terms: DataTerms,
}

#[derive(Debug, Clone)]
pub struct EstimatorState {
    tag: ProductTag,
    dim: usize,
    lambda: f64,
    theta_bar: f64,
    sigma: DMatrix<f64>,
    theta_hat: DVector<f64>,
    prices: Vec<f64>,
    features: Vec<f64>,
    demands: Vec<bool>,
    cache: Option<Cache>,
    clamp_count: u64,
}

impl EstimatorState {
    pub fn new(tag: ProductTag, dim: usize, lambda: f64, theta_bar: f64) -> Result<Self, MleError> {
        if dim == 0 {
            return Err(MleError::Settings("dimension must be positive".into()));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(MleError::Settings(format!("lambda must be positive, got {lambda}")));
        }
        if !(theta_bar > 0.0 && theta_bar.is_finite()) {
            return Err(MleError::Settings(format!("theta_bar must be positive, got {theta_bar}")));
        }
        Ok(Self {
            tag,
            dim,
            lambda,
            theta_bar,
            sigma: DMatrix::identity(dim, dim) * lambda,
            theta_hat: DVector::zeros(dim),
            prices: Vec::new(),
            features: Vec::new(),
            demands: Vec::new(),
            cache: None,
            clamp_count: 0,
        })
    }

    pub fn tag(&self) -> ProductTag {
        self.tag
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn theta_bar(&self) -> f64 {
        self.theta_bar
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn theta_hat(&self) -> &DVector<f64> {
        &self.theta_hat
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    /// Likelihood arguments clamped into the working interval so far.
    pub fn clamp_count(&self) -> u64 {
        self.clamp_count
    }

    pub fn observations(&self) -> impl Iterator<Item = Observation> + '_ {
        (0..self.len()).map(move |i| Observation {
            price: self.prices[i],
            x: self.features[i * self.dim..(i + 1) * self.dim].to_vec(),
            demand: self.demands[i],
        })
    }

    /// Overrides the current estimate (projected onto the ball).
    pub fn set_theta_hat(&mut self, theta: &[f64]) -> Result<(), MleError> {
        self.check_dim(theta.len())?;
        let mut t = DVector::from_column_slice(theta);
        project_ball(t.as_mut_slice(), self.theta_bar);
        self.theta_hat = t;
        Ok(())
    }

    fn check_dim(&self, got: usize) -> Result<(), MleError> {
        if got != self.dim {
            return Err(MleError::Dimension { got, want: self.dim });
        }
        Ok(())
    }

    /// Appends one observation and applies the rank-one design update.
    /// Does not refit.
    pub fn update(&mut self, price: f64, x: &[f64], demand: bool) -> Result<(), MleError> {
        self.check_dim(x.len())?;
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1.0 + 1e-12 {
            return Err(MleError::FeatureNorm(norm));
        }
        for i in 0..self.dim {
            for j in 0..self.dim {
                self.sigma[(i, j)] += x[i] * x[j];
            }
        }
        self.prices.push(price);
        self.features.extend_from_slice(x);
        self.demands.push(demand);
        Ok(())
    }

    fn cholesky(&self) -> Cholesky<f64, nalgebra::Dyn> {
        // sigma >= lambda I > 0 by construction.
        Cholesky::new(self.sigma.clone()).expect("design matrix is positive definite")
    }

    /// `||x||_{Sigma^{-1}}`.
    pub fn inverse_norm(&self, x: &[f64]) -> f64 {
        let l = self.cholesky();
        let mut y = DVector::from_column_slice(x);
        l.l().solve_lower_triangular_mut(&mut y);
        y.norm()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.cholesky().l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// `||theta_hat - theta||_Sigma`, the statistic behind ellipsoid membership.
    pub fn sigma_distance(&self, theta: &[f64]) -> f64 {
        let d = &self.theta_hat - DVector::from_column_slice(theta);
        (d.transpose() * &self.sigma * &d)[(0, 0)].max(0.0).sqrt()
    }

    /// `beta(Sigma) = 2 sqrt(lambda) theta_bar + (2 mu / nu) sqrt(2 log T + log(det Sigma / lambda^d))`.
    pub fn beta_radius(&self, constants: &ShockConstants, horizon: usize) -> f64 {
        let log_ratio = (self.log_det() - self.dim as f64 * self.lambda.ln()).max(0.0);
        2.0 * self.lambda.sqrt() * self.theta_bar
            + 2.0 * constants.mu / constants.nu * (2.0 * (horizon.max(1) as f64).ln() + log_ratio).sqrt()
    }

    /// Ellipsoid extremes `x^T theta_hat +/- beta ||x||_{Sigma^{-1}}`, clipped to
    /// the ball extremes `+/- theta_bar ||x||`.
    pub fn valuation_bounds(&self, beta: f64, x: &[f64]) -> ConfidenceInterval {
        let center = self.point_valuation(x);
        let half = beta * self.inverse_norm(x);
        let ball = self.theta_bar * x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let lcb = (center - half).max(-ball);
        let ucb = (center + half).min(ball);
        ConfidenceInterval { lcb: lcb.min(ucb), ucb: ucb.max(lcb) }
    }

    pub fn point_valuation(&self, x: &[f64]) -> f64 {
        x.iter().zip(self.theta_hat.iter()).map(|(a, b)| a * b).sum()
    }

    /// Objective `J(theta)`; for diagnostics and tests.
    pub fn objective(&self, dist: &ShockDistribution, constants: &ShockConstants, theta: &[f64]) -> f64 {
        let t = self.data_terms(dist, constants, theta, 0, self.len(), Want::Value);
        t.value + self.reg_weight(constants) * theta.iter().map(|v| v * v).sum::<f64>()
    }

    fn reg_weight(&self, constants: &ShockConstants) -> f64 {
        self.lambda * constants.nu
    }

    fn data_terms(
        &self,
        dist: &ShockDistribution,
        constants: &ShockConstants,
        theta: &[f64],
        from: usize,
        to: usize,
        want: Want,
    ) -> DataTerms {
        let window = (constants.working_lo + 1e-12, constants.working_hi - 1e-12);
        let pass = Pass {
            dim: self.dim,
            prices: &self.prices[from..to],
            features: &self.features[from * self.dim..to * self.dim],
            demands: &self.demands[from..to],
            theta,
            window,
        };
        match (dist.kind(), want) {
            (&ShockKind::Uniform { lo, hi }, Want::Derivatives) => pass.derivatives(&UniformKernel { lo, hi }),
            (&ShockKind::Uniform { lo, hi }, Want::Value) => pass.value(&UniformKernel { lo, hi }),
            (&ShockKind::Logistic { loc, scale }, Want::Derivatives) => pass.derivatives(&LogisticKernel { loc, scale }),
            (&ShockKind::Logistic { loc, scale }, Want::Value) => pass.value(&LogisticKernel { loc, scale }),
            (&ShockKind::Normal { mean, sd }, Want::Derivatives) => pass.derivatives(&NormalKernel { mean, sd }),
            (&ShockKind::Normal { mean, sd }, Want::Value) => pass.value(&NormalKernel { mean, sd }),
            (&ShockKind::Tabulated(_), Want::Derivatives) => pass.derivatives(&GenericKernel { dist }),
            (&ShockKind::Tabulated(_), Want::Value) => pass.value(&GenericKernel { dist }),
        }
    }

    /// Exact derivatives at `theta_hat`, reusing the cache when it applies.
    fn terms_at_current(&mut self, dist: &ShockDistribution, constants: &ShockConstants) -> (DataTerms, bool) {
        let n = self.len();
        let theta = self.theta_hat.as_slice().to_vec();
        if let Some(cache) = &self.cache {
            if cache.theta == theta && cache.n <= n {
                let mut terms = cache.terms.clone();
                if cache.n < n {
                    let extra = self.data_terms(dist, constants, &theta, cache.n, n, Want::Derivatives);
                    for (a, b) in terms.grad.iter_mut().zip(&extra.grad) {
                        *a += b;
                    }
                    for (a, b) in terms.hess.iter_mut().zip(&extra.hess) {
                        *a += b;
                    }
                    terms.clamps += extra.clamps;
                }
                return (terms, false);
            }
        }
        (self.data_terms(dist, constants, &theta, 0, n, Want::Derivatives), true)
    }

    /// Refits `theta_hat` from a warm start at the previous estimate.
    pub fn fit(&mut self, dist: &ShockDistribution, constants: &ShockConstants) -> Result<FitReport, MleError> {
        self.fit_with(dist, constants, &FitSettings::default())
    }

    /// Line searches estimate `J(c) - J(theta)` by the trapezoid rule on the
    /// directional derivative, `(grad J(theta) + grad J(c)) . (c - theta) / 2`.
    /// It is exact for quadratics, so unit Newton steps pass, and unlike value
    /// differences it does not lose precision to cancellation near the optimum.
    pub fn fit_with(
        &mut self,
        dist: &ShockDistribution,
        constants: &ShockConstants,
        settings: &FitSettings,
    ) -> Result<FitReport, MleError> {
        let d = self.dim;
        let reg = self.reg_weight(constants);
        let n = self.len();
        let mut theta = self.theta_hat.as_slice().to_vec();
        let (mut terms, full) = self.terms_at_current(dist, constants);
        let mut passes = usize::from(full);
        let mut last_step = 0.0f64;

        let full_grad = |t: &DataTerms, th: &[f64]| -> Vec<f64> {
            t.grad.iter().zip(th).map(|(g, v)| g + 2.0 * reg * v).collect()
        };
        let full_hess = |t: &DataTerms| -> DMatrix<f64> {
            let mut h = DMatrix::from_column_slice(d, d, &t.hess);
            for i in 0..d {
                h[(i, i)] += 2.0 * reg;
            }
            h
        };
        let change = |g_0: &[f64], g_c: &[f64], c: &[f64], th: &[f64]| -> f64 {
            0.5 * g_0.iter().zip(g_c).zip(c.iter().zip(th)).map(|((g, h), (a, b))| (g + h) * (a - b)).sum::<f64>()
        };
        // Sufficient decrease, or, when the predicted decrease is below what
        // rounding of a projected step can resolve, strict progress in the
        // gradient mapping.
        let theta_bar = self.theta_bar;
        let acceptable = |g_0: &[f64], t: &DataTerms, c: &[f64], th: &[f64], predicted: f64, gm: f64, g_norm: f64| -> bool {
            let g_c = full_grad(t, c);
            if predicted.abs() <= 64.0 * f64::EPSILON * g_norm * theta_bar {
                gradient_mapping(c, &g_c, theta_bar) < gm
            } else {
                change(g_0, &g_c, c, th) <= predicted
            }
        };

        let mut iterations = 0;
        loop {
            let grad = full_grad(&terms, &theta);
            let g_norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
            let gm = gradient_mapping(&theta, &grad, self.theta_bar);
            if gm <= settings.tol {
                self.clamp_count += terms.clamps;
                self.theta_hat = DVector::from_vec(theta.clone());
                self.cache = Some(Cache { n, theta, terms });
                return Ok(FitReport { iterations, passes, gradient_mapping: gm });
            }
            if iterations >= settings.max_iter {
                return Err(MleError::Convergence { iterations, gradient_mapping: gm });
            }
            iterations += 1;

            let mut accepted = None;
            if settings.solver == Solver::ProjectedNewton {
                if let Some(target) = newton_point(&full_hess(&terms), &theta, &grad, self.theta_bar) {
                    let dir: Vec<f64> = target.iter().zip(&theta).map(|(a, b)| a - b).collect();
                    let slope: f64 = dir.iter().zip(&grad).map(|(a, b)| a * b).sum();
                    let mut s = 1.0;
                    while s > 1e-10 {
                        let cand: Vec<f64> = theta.iter().zip(&dir).map(|(t, v)| t + s * v).collect();
                        let t = self.data_terms(dist, constants, &cand, 0, n, Want::Derivatives);
                        passes += 1;
                        if acceptable(&grad, &t, &cand, &theta, settings.armijo * s * slope, gm, g_norm) {
                            accepted = Some((cand, t));
                            break;
                        }
                        s *= settings.shrink;
                    }
                }
            }
            if accepted.is_none() {
                // Projected gradient with backtracking along the projection arc.
                let mut s = if last_step > 0.0 {
                    (last_step * 2.0).min(1e6)
                } else {
                    let h = full_hess(&terms);
                    1.0 / (0..d).map(|i| h[(i, i)]).sum::<f64>().max(1e-12)
                };
                loop {
                    let mut cand: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - s * g).collect();
                    project_ball(&mut cand, self.theta_bar);
                    let step: f64 = cand.iter().zip(&theta).zip(&grad).map(|((c, t), g)| g * (c - t)).sum();
                    let t = self.data_terms(dist, constants, &cand, 0, n, Want::Derivatives);
                    passes += 1;
                    if acceptable(&grad, &t, &cand, &theta, settings.armijo * step, gm, g_norm) || s < 1e-300 {
                        last_step = s;
                        accepted = Some((cand, t));
                        break;
                    }
                    s *= settings.shrink;
                }
            }
            let (cand, t) = accepted.expect("a step is always accepted");
            theta = cand;
            terms = t;
        }
    }

    /// Checks the bookkeeping invariants: `Sigma = lambda I + sum x x^T`,
    /// `Sigma >= lambda I`, and `||theta_hat|| <= theta_bar`.
    pub fn audit(&self) -> Result<(), String> {
        let mut expect = DMatrix::identity(self.dim, self.dim) * self.lambda;
        for obs in self.observations() {
            let x = DVector::from_vec(obs.x);
            expect += &x * x.transpose();
        }
        let diff = (&expect - &self.sigma).abs().max();
        if diff > 1e-8 * expect.abs().max().max(1.0) {
            return Err(format!("design matrix drifted from its observations by {diff:e}"));
        }
        let min_eig = self.sigma.clone().symmetric_eigen().eigenvalues.min();
        if min_eig < self.lambda * (1.0 - 1e-9) {
            return Err(format!("smallest eigenvalue {min_eig} below lambda {}", self.lambda));
        }
        if self.theta_hat.norm() > self.theta_bar + 1e-9 {
            return Err(format!("estimate norm {} exceeds theta_bar {}", self.theta_hat.norm(), self.theta_bar));
        }
        Ok(())
    }
}

/// `beta_bar = 2 sqrt(lambda) theta_bar + (2 mu / nu) sqrt(2 log T + d log((d lambda + T) / (d lambda)))`.
pub fn beta_bar(dim: usize, horizon: usize, lambda: f64, theta_bar: f64, constants: &ShockConstants) -> f64 {
    let (d, t) = (dim as f64, horizon.max(1) as f64);
    2.0 * lambda.sqrt() * theta_bar
        + 2.0 * constants.mu / constants.nu * (2.0 * t.ln() + d * ((d * lambda + t) / (d * lambda)).ln()).sqrt()
}

/// Log-likelihood of `theta` on a set of observations.
pub fn log_likelihood(dist: &ShockDistribution, observations: &[Observation], theta: &[f64]) -> Result<f64, MleError> {
    let mut ll = 0.0;
    for obs in observations {
        let z = obs.price - obs.x.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>();
        let p = if obs.demand { dist.sf(z) } else { dist.cdf(z) };
        if !(p > 0.0) || dist.pdf(z) <= 0.0 {
            return Err(MleError::Domain { z });
        }
        ll += p.ln();
    }
    Ok(ll)
}

/// Alternative ancillary estimate `theta_hat_b - theta_hat_f`, exposed as a diagnostic.
pub fn difference_estimate(bundle: &EstimatorState, focal: &EstimatorState) -> DVector<f64> {
    bundle.theta_hat() - focal.theta_hat()
}

pub(crate) fn project_ball(theta: &mut [f64], radius: f64) {
    let norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > radius {
        for v in theta.iter_mut() {
            *v *= radius / norm;
        }
    }
}

/// `||theta - P(theta - grad)||`, zero exactly at the constrained minimizer.
fn gradient_mapping(theta: &[f64], grad: &[f64], radius: f64) -> f64 {
    let mut p: Vec<f64> = theta.iter().zip(grad).map(|(t, g)| t - g).collect();
    project_ball(&mut p, radius);
    p.iter().zip(theta).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

/// Minimizer of the local quadratic model over the ball. Solves
/// `(H + gamma I) theta' = H theta - g` with `gamma >= 0` chosen so that the
/// result lies in the ball (`gamma = 0` when the Newton point is interior).
fn newton_point(h: &DMatrix<f64>, theta: &[f64], grad: &[f64], radius: f64) -> Option<Vec<f64>> {
    let d = theta.len();
    let th = DVector::from_column_slice(theta);
    let b = h * &th - DVector::from_column_slice(grad);
    let solve = |gamma: f64| -> Option<DVector<f64>> {
        let mut m = h.clone();
        for i in 0..d {
            m[(i, i)] += gamma;
        }
        Cholesky::new(m).map(|c| c.solve(&b))
    };
    let free = solve(0.0)?;
    if free.norm() <= radius {
        return Some(free.as_slice().to_vec());
    }
    let (mut lo, mut hi) = (0.0, b.norm() / radius);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if solve(mid)?.norm() > radius {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.max(1.0) {
            break;
        }
    }
    let mut out = solve(hi)?.as_slice().to_vec();
    project_ball(&mut out, radius);
    Some(out)
}

/// Per-observation negative log-likelihood term `h(z)` and its first two
/// derivatives in `z`, where `z = p - x^T theta`.
trait Kernel {
    fn value(&self, demand: bool, z: f64) -> f64;
    fn derivs(&self, demand: bool, z: f64) -> (f64, f64);
}

struct UniformKernel {
    lo: f64,
    hi: f64,
}

impl Kernel for UniformKernel {
    #[inline]
    fn value(&self, demand: bool, z: f64) -> f64 {
        let w = self.hi - self.lo;
        if demand {
            -((self.hi - z) / w).ln()
        } else {
            -((z - self.lo) / w).ln()
        }
    }
    #[inline]
    fn derivs(&self, demand: bool, z: f64) -> (f64, f64) {
        // Branch-free: demand outcomes are unpredictable.
        let edge = if demand { self.hi } else { self.lo };
        let r = 1.0 / (edge - z);
        (r, r * r)
    }
}

struct LogisticKernel {
    loc: f64,
    scale: f64,
}

#[inline]
fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl Kernel for LogisticKernel {
    #[inline]
    fn value(&self, demand: bool, z: f64) -> f64 {
        let u = (z - self.loc) / self.scale;
        softplus(if demand { u } else { -u })
    }
    #[inline]
    fn derivs(&self, demand: bool, z: f64) -> (f64, f64) {
        let u = (z - self.loc) / self.scale;
        let s = sigmoid(if demand { u } else { -u });
        let h2 = s * (1.0 - s) / (self.scale * self.scale);
        if demand {
            (s / self.scale, h2)
        } else {
            (-s / self.scale, h2)
        }
    }
}

struct NormalKernel {
    mean: f64,
    sd: f64,
}

impl NormalKernel {
    #[inline]
    fn parts(&self, demand: bool, z: f64) -> (f64, f64, f64) {
        let u = (z - self.mean) / self.sd;
        let tail = if demand { 0.5 * erfc(u / std::f64::consts::SQRT_2) } else { 0.5 * erfc(-u / std::f64::consts::SQRT_2) };
        let pdf = (-0.5 * u * u).exp() / (self.sd * (2.0 * std::f64::consts::PI).sqrt());
        (u, tail, pdf)
    }
}

impl Kernel for NormalKernel {
    #[inline]
    fn value(&self, demand: bool, z: f64) -> f64 {
        -self.parts(demand, z).1.ln()
    }
    #[inline]
    fn derivs(&self, demand: bool, z: f64) -> (f64, f64) {
        let (u, tail, pdf) = self.parts(demand, z);
        let r = pdf / tail;
        if demand {
            (r, r * (r - u / self.sd))
        } else {
            (-r, r * (r + u / self.sd))
        }
    }
}

struct GenericKernel<'a> {
    dist: &'a ShockDistribution,
}

impl Kernel for GenericKernel<'_> {
    fn value(&self, demand: bool, z: f64) -> f64 {
        if demand {
            -self.dist.sf(z).ln()
        } else {
            -self.dist.cdf(z).ln()
        }
    }
    fn derivs(&self, demand: bool, z: f64) -> (f64, f64) {
        if demand {
            self.dist.neg_log_sf_derivs(z)
        } else {
            self.dist.neg_log_cdf_derivs(z)
        }
    }
}

struct Pass<'a> {
    dim: usize,
    prices: &'a [f64],
    features: &'a [f64],
    demands: &'a [bool],
    theta: &'a [f64],
    window: (f64, f64),
}

impl Pass<'_> {
    /// Likelihood argument for observation `i`, clamped into the window.
    #[inline]
    fn argument(&self, i: usize) -> (f64, bool) {
        let d = self.dim;
        let x = &self.features[i * d..(i + 1) * d];
        let z = self.prices[i] - x.iter().zip(self.theta).map(|(a, b)| a * b).sum::<f64>();
        if z < self.window.0 || z > self.window.1 {
            (z.clamp(self.window.0, self.window.1), true)
        } else {
            (z, false)
        }
    }

    fn value<K: Kernel>(&self, kernel: &K) -> DataTerms {
        let d = self.dim;
        let mut out = DataTerms { value: 0.0, grad: vec![0.0; d], hess: vec![0.0; d * d], clamps: 0 };
        for i in 0..self.prices.len() {
            let (z, clamped) = self.argument(i);
            out.clamps += u64::from(clamped);
            out.value += kernel.value(self.demands[i], z);
        }
        out
    }

    fn derivatives<K: Kernel>(&self, kernel: &K) -> DataTerms {
        match self.dim {
            1 => self.derivatives_fixed::<1, K>(kernel),
            2 => self.derivatives_fixed::<2, K>(kernel),
            3 => self.derivatives_fixed::<3, K>(kernel),
            4 => self.derivatives_fixed::<4, K>(kernel),
            _ => self.derivatives_any(kernel),
        }
    }

    /// Same as `derivatives_any` with the dimension known at compile time,
    /// which lets the per-observation loops unroll.
    fn derivatives_fixed<const D: usize, K: Kernel>(&self, kernel: &K) -> DataTerms {
        let theta: [f64; D] = self.theta.try_into().expect("dimension checked by caller");
        let (mut grad, mut hess, mut clamps) = ([0.0; D], [[0.0; D]; D], 0u64);
        let rows = self.features.chunks_exact(D).zip(self.prices).zip(self.demands);
        for ((x, &price), &demand) in rows {
            let x: &[f64; D] = x.try_into().expect("chunk of length D");
            let mut z = price;
            for a in 0..D {
                z -= x[a] * theta[a];
            }
            if z < self.window.0 || z > self.window.1 {
                clamps += 1;
                continue;
            }
            let (h1, h2) = kernel.derivs(demand, z);
            for a in 0..D {
                grad[a] -= h1 * x[a];
                let ha = h2 * x[a];
                for b in a..D {
                    hess[a][b] += ha * x[b];
                }
            }
        }
        let mut out = DataTerms { value: 0.0, grad: grad.to_vec(), hess: vec![0.0; D * D], clamps };
        for a in 0..D {
            for b in a..D {
                out.hess[a * D + b] = hess[a][b];
                out.hess[b * D + a] = hess[a][b];
            }
        }
        out
    }

    fn derivatives_any<K: Kernel>(&self, kernel: &K) -> DataTerms {
        let d = self.dim;
        let mut out = DataTerms { value: 0.0, grad: vec![0.0; d], hess: vec![0.0; d * d], clamps: 0 };
        for i in 0..self.prices.len() {
            let (z, clamped) = self.argument(i);
            if clamped {
                // Constant in theta once clamped.
                out.clamps += 1;
                continue;
            }
            let x = &self.features[i * d..(i + 1) * d];
            let (h1, h2) = kernel.derivs(self.demands[i], z);
            // dz/dtheta = -x
            for a in 0..d {
                out.grad[a] -= h1 * x[a];
                let ha = h2 * x[a];
                for b in a..d {
                    out.hess[a * d + b] += ha * x[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                out.hess[a * d + b] = out.hess[b * d + a];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shock_dist::compute_constants;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn u22() -> ShockDistribution {
        ShockDistribution::uniform(-2.0, 2.0).unwrap()
    }

    fn consts() -> ShockConstants {
        compute_constants(&u22(), 0.1, 1.0, 0.5, 10_000).unwrap()
    }

    fn unit_ball(rng: &mut impl Rng, d: usize) -> Vec<f64> {
        loop {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if x.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                return x;
            }
        }
    }

    fn simulate(theta_star: &[f64], n: usize, seed: u64, price: f64) -> EstimatorState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut st = EstimatorState::new(ProductTag::Focal, theta_star.len(), 1.0, 0.5).unwrap();
        let d = u22();
        for _ in 0..n {
            let x = unit_ball(&mut rng, theta_star.len());
            let v: f64 = x.iter().zip(theta_star).map(|(a, b)| a * b).sum();
            let buy = v + d.sample(&mut rng) >= price;
            st.update(price, &x, buy).unwrap();
        }
        st
    }

    #[test]
    fn log_likelihood_examples() {
        let d = u22();
        assert_eq!(log_likelihood(&d, &[], &[0.0]).unwrap(), 0.0);
        let buy = Observation { price: 1.0, x: vec![1.0], demand: true };
        assert_relative_eq!(log_likelihood(&d, &[buy], &[0.0]).unwrap(), 0.25f64.ln(), epsilon = 1e-12);
        let skip = Observation { price: 1.0, x: vec![1.0], demand: false };
        assert_relative_eq!(log_likelihood(&d, &[skip], &[0.0]).unwrap(), 0.75f64.ln(), epsilon = 1e-12);
        let out = Observation { price: 3.0, x: vec![0.0], demand: true };
        assert!(matches!(log_likelihood(&d, &[out], &[0.0]), Err(MleError::Domain { .. })));
    }

    #[test]
    fn log_likelihood_is_concave_along_segments() {
        let st = simulate(&[0.3, -0.2], 300, 1, 0.9);
        let obs: Vec<_> = st.observations().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let a: Vec<f64> = unit_ball(&mut rng, 2).iter().map(|v| v * 0.5).collect();
            let b: Vec<f64> = unit_ball(&mut rng, 2).iter().map(|v| v * 0.5).collect();
            let m: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let (la, lb, lm) = (
                log_likelihood(&u22(), &obs, &a).unwrap(),
                log_likelihood(&u22(), &obs, &b).unwrap(),
                log_likelihood(&u22(), &obs, &m).unwrap(),
            );
            assert!(lm >= 0.5 * (la + lb) - 1e-9);
        }
    }

    #[test]
    fn fit_without_data_returns_zero() {
        let mut st = EstimatorState::new(ProductTag::Focal, 3, 1.0, 0.5).unwrap();
        st.fit(&u22(), &consts()).unwrap();
        assert!(st.theta_hat().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn fit_is_consistent_and_dominates_truth() {
        let star = [0.3, -0.2];
        let mut st = simulate(&star, 10_000, 3, 0.9);
        let c = consts();
        let rep = st.fit(&u22(), &c).unwrap();
        assert!(rep.gradient_mapping <= 1e-8);
        let err = (st.theta_hat() - DVector::from_column_slice(&star)).norm();
        assert!(err <= 0.1, "error {err}");
        let at_hat = st.objective(&u22(), &c, st.theta_hat().as_slice());
        assert!(at_hat <= st.objective(&u22(), &c, &star));
        assert!(at_hat <= st.objective(&u22(), &c, &[0.0, 0.0]));
    }

    #[test]
    fn newton_and_gradient_solvers_agree() {
        for (n, star) in [(40usize, [0.5, 0.0]), (2000, [0.3, -0.2])] {
            let base = simulate(&star, n, 9, 0.6);
            let c = consts();
            let mut a = base.clone();
            let mut b = base;
            a.fit(&u22(), &c).unwrap();
            let settings = FitSettings { solver: Solver::ProjectedGradient, max_iter: 20_000, ..Default::default() };
            b.fit_with(&u22(), &c, &settings).unwrap();
            assert!((a.theta_hat() - b.theta_hat()).norm() < 1e-6, "{} vs {}", a.theta_hat(), b.theta_hat());
        }
    }

    #[test]
    fn incremental_refit_matches_cold_fit() {
        let c = consts();
        let mut warm = simulate(&[0.2, 0.1], 500, 4, 0.8);
        warm.fit(&u22(), &c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x = unit_ball(&mut rng, 2);
            warm.update(0.8, &x, rng.gen_bool(0.4)).unwrap();
            warm.fit(&u22(), &c).unwrap();
        }
        let mut cold = warm.clone();
        cold.cache = None;
        cold.theta_hat = DVector::zeros(2);
        cold.fit(&u22(), &c).unwrap();
        assert!((warm.theta_hat() - cold.theta_hat()).norm() < 1e-8);
    }

    #[test]
    fn boundary_solution_is_on_the_ball() {
        // Everyone buys at a high price: likelihood pushes theta outward.
        let mut st = EstimatorState::new(ProductTag::Bundle, 2, 1.0, 0.5).unwrap();
        for _ in 0..200 {
            st.update(1.0, &[1.0, 0.0], true).unwrap();
        }
        st.fit(&u22(), &consts()).unwrap();
        assert_relative_eq!(st.theta_hat().norm(), 0.5, epsilon = 1e-9);
        st.audit().unwrap();
    }

    #[test]
    fn beta_examples() {
        let c = consts();
        let st = EstimatorState::new(ProductTag::Focal, 2, 1.0, 0.5).unwrap();
        let beta = st.beta_radius(&c, 100);
        let expect = 1.0 + 49.0 * (2.0 * 100f64.ln()).sqrt();
        assert_relative_eq!(beta, expect, epsilon = 1e-9);
        assert!((beta - 149.71).abs() < 0.01);
        assert_relative_eq!(beta_bar(2, 100, 1.0, 0.5, &c), 1.0 + 49.0 * (2.0 * 100f64.ln() + 2.0 * 51f64.ln()).sqrt(), epsilon = 1e-9);
        assert!((beta_bar(2, 100, 1.0, 0.5, &c) - 203.5).abs() < 0.1);
        assert_relative_eq!(beta_bar(1, 1, 1.0, 0.5, &c), 1.0 + 49.0 * 2f64.ln().sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn beta_is_monotone_and_dominated_by_beta_bar() {
        let c = consts();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let d = rng.gen_range(1..5);
            let horizon = rng.gen_range(1..300);
            let mut st = EstimatorState::new(ProductTag::Focal, d, 1.0, 0.5).unwrap();
            let mut prev = st.beta_radius(&c, horizon);
            for _ in 0..rng.gen_range(0..=horizon) {
                let mut x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                x.iter_mut().for_each(|v| *v /= n);
                st.update(0.5, &x, true).unwrap();
                let b = st.beta_radius(&c, horizon);
                assert!(b >= prev - 1e-12);
                prev = b;
            }
            assert!(prev <= beta_bar(d, horizon, 1.0, 0.5, &c) + 1e-9);
        }
    }

    #[test]
    fn valuation_bounds_examples() {
        let mut st = EstimatorState::new(ProductTag::Focal, 2, 4.0, 0.5).unwrap();
        st.set_theta_hat(&[0.3, 0.0]).unwrap();
        let ci = st.valuation_bounds(1.0, &[1.0, 0.0]);
        assert_relative_eq!(ci.lcb, -0.2, epsilon = 1e-12);
        assert_relative_eq!(ci.ucb, 0.5, epsilon = 1e-12);
        let ci = st.valuation_bounds(0.0, &[1.0, 0.0]);
        assert_relative_eq!(ci.lcb, 0.3);
        assert_relative_eq!(ci.ucb, 0.3);
        let ci = st.valuation_bounds(1.0, &[0.0, 0.0]);
        assert_eq!((ci.lcb, ci.ucb), (0.0, 0.0));
    }

    #[test]
    fn bounds_contain_every_member_of_the_ellipsoid() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut st = simulate(&[0.2, 0.1], 50, 22, 0.7);
        st.fit(&u22(), &consts()).unwrap();
        let beta = 2.0;
        let l = st.sigma().clone().cholesky().unwrap();
        for _ in 0..500 {
            // theta = theta_hat + beta * L^{-T} u with ||u|| <= 1, kept if in the ball.
            let u = DVector::from_vec(unit_ball(&mut rng, 2));
            let mut off = u * beta;
            l.l().transpose().solve_upper_triangular_mut(&mut off);
            let theta = st.theta_hat() + off;
            if theta.norm() > 0.5 {
                continue;
            }
            let x = unit_ball(&mut rng, 2);
            let v: f64 = x.iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
            let ci = st.valuation_bounds(beta, &x);
            assert!(ci.lcb <= v + 1e-12 && v <= ci.ucb + 1e-12);
        }
    }

    #[test]
    fn update_bookkeeping() {
        let mut a = EstimatorState::new(ProductTag::Ancillary, 2, 1.0, 0.5).unwrap();
        let mut b = a.clone();
        a.update(0.5, &[0.6, 0.0], true).unwrap();
        a.update(0.5, &[0.0, 0.8], false).unwrap();
        b.update(0.5, &[0.0, 0.8], false).unwrap();
        b.update(0.5, &[0.6, 0.0], true).unwrap();
        assert_eq!(a.sigma(), b.sigma());
        a.audit().unwrap();
        let before = a.sigma().clone();
        a.update(0.5, &[0.0, 0.0], true).unwrap();
        assert_eq!(a.sigma(), &before);
        assert_eq!(a.len(), 3);
        assert!(matches!(a.update(0.5, &[1.0, 1.0], true), Err(MleError::FeatureNorm(_))));
        assert!(matches!(a.update(0.5, &[1.0], true), Err(MleError::Dimension { .. })));
    }

    #[test]
    fn difference_estimate_is_componentwise() {
        let mut b = EstimatorState::new(ProductTag::Bundle, 2, 1.0, 1.0).unwrap();
        let mut f = EstimatorState::new(ProductTag::Focal, 2, 1.0, 1.0).unwrap();
        b.set_theta_hat(&[0.5, 0.1]).unwrap();
        f.set_theta_hat(&[0.2, 0.3]).unwrap();
        let d = difference_estimate(&b, &f);
        assert_relative_eq!(d[0], 0.3);
        assert_relative_eq!(d[1], -0.2);
    }

    #[test]
    fn normal_and_logistic_fits_converge() {
        let c_n = compute_constants(&ShockDistribution::normal(0.0, 1.0).unwrap(), 0.1, 1.0, 0.5, 1000).unwrap();
        let c_l = compute_constants(&ShockDistribution::logistic(0.0, 0.7).unwrap(), 0.1, 1.0, 0.5, 1000).unwrap();
        for (dist, c) in [
            (ShockDistribution::normal(0.0, 1.0).unwrap(), c_n),
            (ShockDistribution::logistic(0.0, 0.7).unwrap(), c_l),
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(12);
            let mut st = EstimatorState::new(ProductTag::Focal, 2, 1.0, 0.5).unwrap();
            for _ in 0..3000 {
                let x = unit_ball(&mut rng, 2);
                let v = 0.3 * x[0] - 0.2 * x[1];
                st.update(0.5, &x, v + dist.sample(&mut rng) >= 0.5).unwrap();
            }
            let rep = st.fit(&dist, &c).unwrap();
            assert!(rep.gradient_mapping <= 1e-8);
            assert!((st.theta_hat()[0] - 0.3).abs() < 0.2 && (st.theta_hat()[1] + 0.2).abs() < 0.2);
        }
    }
}
