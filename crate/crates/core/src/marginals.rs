//! Gamma regression marginals with a standardized time trend.
//!
//! Region `i` in year `t` has `Y_it ~ Gamma(shape a_i, rate λ_it)` with
//! `λ_it = a_i b_i exp(c_i t*)`, so `E(Y_it) = b_i⁻¹ exp(-c_i t*)` and the
//! coefficient of variation `a_i^{-1/2}` is constant in time. In terms of the
//! log-link mean `log μ_it = α̃_i + β̃_i t*` the identities are
//! `α̃_i = -log b_i` and `β̃_i = -c_i`.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optim;
use crate::panel::RegionalPanel;
use crate::special::{self, gamma_p_inverse, gamma_pq, ln_gamma};

/// PIT values are clamped to `[PIT_EPS, 1 - PIT_EPS]`.
pub const PIT_EPS: f64 = 1e-12;

/// Fewest observed years for a per-region likelihood fit.
pub const MIN_FIT_OBSERVATIONS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarginalError {
    #[error("at least two time points are required, got {0}")]
    TooFewTimePoints(usize),
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("probability must lie strictly inside (0, 1), got {0}")]
    ProbabilityOutOfRange(f64),
    #[error("series length {actual} does not match {expected} time points")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("need at least {MIN_FIT_OBSERVATIONS} observations, got {0}")]
    TooFewObservations(usize),
    #[error("observation {index} is {value}; the gamma support is (0, inf)")]
    OutsideSupport { index: usize, value: f64 },
    #[error("maximum likelihood did not converge (gradient norm {grad_norm:e}) at {best:?}")]
    NotConverged { best: [f64; 3], grad_norm: f64 },
    #[error("noiseless log-linear series: residual variance is zero")]
    DegenerateLognormal { alpha_star: f64, beta_star: f64 },
}

/// `t*_t = (t - m_t) / s_t` for `t = 1..=T`, with the population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeStandardizer {
    pub t_len: usize,
    pub m_t: f64,
    pub s_t: f64,
    pub t_star: Vec<f64>,
}

pub fn standardize_time(t_len: usize) -> Result<TimeStandardizer, MarginalError> {
    if t_len < 2 {
        return Err(MarginalError::TooFewTimePoints(t_len));
    }
    let tf = t_len as f64;
    let m_t = (tf + 1.0) / 2.0;
    // T⁻¹Σt² - m_t² = (T² - 1)/12
    let s_t = ((tf * tf - 1.0) / 12.0).sqrt();
    let t_star = (1..=t_len).map(|t| (t as f64 - m_t) / s_t).collect();
    Ok(TimeStandardizer { t_len, m_t, s_t, t_star })
}

impl TimeStandardizer {
    pub fn new(t_len: usize) -> Result<Self, MarginalError> {
        standardize_time(t_len)
    }
}

fn check_positive(name: &'static str, value: f64) -> Result<(), MarginalError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(MarginalError::NonPositive { name, value })
    }
}

pub fn gamma_logpdf(y: f64, shape: f64, rate: f64) -> Result<f64, MarginalError> {
    check_positive("y", y)?;
    check_positive("shape", shape)?;
    check_positive("rate", rate)?;
    Ok(gamma_logpdf_unchecked(y, shape, rate))
}

#[inline]
pub(crate) fn gamma_logpdf_unchecked(y: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * y.ln() - rate * y
}

pub fn gamma_cdf(y: f64, shape: f64, rate: f64) -> Result<f64, MarginalError> {
    check_positive("y", y)?;
    check_positive("shape", shape)?;
    check_positive("rate", rate)?;
    Ok(gamma_pq(shape, rate * y).0)
}

pub fn gamma_quantile(u: f64, shape: f64, rate: f64) -> Result<f64, MarginalError> {
    if !(u > 0.0 && u < 1.0) {
        return Err(MarginalError::ProbabilityOutOfRange(u));
    }
    check_positive("shape", shape)?;
    check_positive("rate", rate)?;
    Ok(gamma_p_inverse(shape, u) / rate)
}

/// Latent normal score `Φ⁻¹(F(y))`, computed from whichever gamma tail is
/// smaller so that upper-tail scores keep full precision. The implied
/// uniform is clamped to `[PIT_EPS, 1 - PIT_EPS]`; the flag reports a clamp.
pub fn gamma_latent_score(y: f64, shape: f64, rate: f64) -> (f64, bool) {
    let (p, q) = gamma_pq(shape, rate * y);
    if p < PIT_EPS {
        (special::normal_quantile(PIT_EPS), true)
    } else if q < PIT_EPS {
        (-special::normal_quantile(PIT_EPS), true)
    } else {
        (special::normal_score_from_tails(p, q), false)
    }
}

/// Inverse of [`gamma_latent_score`]: `F⁻¹(Φ(z))`, again through the smaller tail.
pub fn gamma_from_latent(z: f64, shape: f64, rate: f64) -> f64 {
    let z = z.clamp(special::normal_quantile(PIT_EPS), -special::normal_quantile(PIT_EPS));
    let p = special::normal_cdf(z);
    if z > 0.0 {
        special::gamma_q_inverse(shape, special::normal_sf(z)) / rate
    } else {
        gamma_p_inverse(shape, p) / rate
    }
}

/// Per-region `(a_i, b_i, c_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSvcParams {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl GammaSvcParams {
    pub fn new(a: Vec<f64>, b: Vec<f64>, c: Vec<f64>) -> Result<Self, MarginalError> {
        let n = a.len();
        for len in [b.len(), c.len()] {
            if len != n {
                return Err(MarginalError::LengthMismatch { expected: n, actual: len });
            }
        }
        for &v in &a {
            check_positive("a", v)?;
        }
        for &v in &b {
            check_positive("b", v)?;
        }
        Ok(Self { a, b, c })
    }

    /// From the log-scale views `a* = log a`, `b* = log b`.
    pub fn from_log(a_star: &[f64], b_star: &[f64], c: &[f64]) -> Self {
        Self {
            a: a_star.iter().map(|v| v.exp()).collect(),
            b: b_star.iter().map(|v| v.exp()).collect(),
            c: c.to_vec(),
        }
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn a_star(&self) -> Vec<f64> {
        self.a.iter().map(|v| v.ln()).collect()
    }

    pub fn b_star(&self) -> Vec<f64> {
        self.b.iter().map(|v| v.ln()).collect()
    }

    #[inline]
    pub fn rate(&self, i: usize, t_star: f64) -> f64 {
        self.a[i] * self.b[i] * (self.c[i] * t_star).exp()
    }

    pub fn mean(&self, i: usize, t_star: f64) -> f64 {
        (-self.c[i] * t_star).exp() / self.b[i]
    }

    /// Draw of `Y_it` under independence.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, i: usize, t_star: f64) -> f64 {
        let scale = 1.0 / self.rate(i, t_star);
        Gamma::new(self.a[i], scale).expect("validated gamma parameters").sample(rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalComponents {
    pub mu: f64,
    pub lambda: f64,
}

pub fn marginal_components(params: &GammaSvcParams, ts: &TimeStandardizer, i: usize, t: usize) -> MarginalComponents {
    let ts_t = ts.t_star[t];
    MarginalComponents { mu: params.mean(i, ts_t), lambda: params.rate(i, ts_t) }
}

/// Negative log-likelihood and gradient in `θ = (log a, log b, c)`.
pub fn gamma_negloglik(theta: &[f64], obs: &[(f64, f64)]) -> (f64, Vec<f64>) {
    let (la, lb, c) = (theta[0], theta[1], theta[2]);
    let a = la.exp();
    let lg = ln_gamma(a);
    let psi = special::digamma(a);
    let (mut f, mut ga, mut gb, mut gc) = (0.0, 0.0, 0.0, 0.0);
    for &(ts, y) in obs {
        let log_rate = la + lb + c * ts;
        let rate = log_rate.exp();
        let ly = y.ln();
        let ry = rate * y;
        f += a * log_rate - lg + (a - 1.0) * ly - ry;
        ga += a * (log_rate + 1.0 - psi + ly) - ry;
        gb += a - ry;
        gc += ts * (a - ry);
    }
    (-f, vec![-ga, -gb, -gc])
}

/// Region fit with standard errors on both scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaRegionFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Standard errors of `(a, b, c)` by the delta method.
    pub se: [f64; 3],
    /// Standard errors of `(log a, log b, c)`.
    pub se_log: [f64; 3],
    pub loglik: f64,
    pub iterations: usize,
    pub observations: usize,
}

fn observed_pairs(y: &[Option<f64>], ts: &TimeStandardizer) -> Result<Vec<(f64, f64)>, MarginalError> {
    if y.len() != ts.t_len {
        return Err(MarginalError::LengthMismatch { expected: ts.t_len, actual: y.len() });
    }
    let mut obs = Vec::with_capacity(y.len());
    for (t, v) in y.iter().enumerate() {
        if let Some(v) = *v {
            if !(v > 0.0) || !v.is_finite() {
                return Err(MarginalError::OutsideSupport { index: t, value: v });
            }
            obs.push((ts.t_star[t], v));
        }
    }
    if obs.len() < MIN_FIT_OBSERVATIONS {
        return Err(MarginalError::TooFewObservations(obs.len()));
    }
    Ok(obs)
}

const GRAD_TOL: f64 = 1e-8;

pub fn fit_region_gamma(y: &[Option<f64>], ts: &TimeStandardizer) -> Result<GammaRegionFit, MarginalError> {
    let obs = observed_pairs(y, ts)?;
    let m = obs.len() as f64;
    let mean = obs.iter().map(|o| o.1).sum::<f64>() / m;
    let var = obs.iter().map(|o| (o.1 - mean).powi(2)).sum::<f64>() / m;
    let a0 = if var > 0.0 { (mean * mean / var).clamp(1e-3, 1e6) } else { 1e3 };
    let start = [a0.ln(), (1.0 / mean).ln(), 0.0];

    let objective = |th: &[f64]| gamma_negloglik(th, &obs);
    let mut best = optim::bfgs(objective, &start, GRAD_TOL, 500);
    if !best.converged {
        let (x, _) = optim::nelder_mead(|th| objective(th).0, &best.x, 0.1, 1e-15, 20_000);
        let retry = optim::bfgs(objective, &x, GRAD_TOL, 500);
        if retry.value <= best.value || retry.converged {
            best = retry;
        }
    }
    if !best.converged {
        return Err(MarginalError::NotConverged {
            best: [best.x[0].exp(), best.x[1].exp(), best.x[2]],
            grad_norm: best.grad_norm,
        });
    }
    let theta = best.x.clone();
    let hessian = numerical_hessian(|th| objective(th).1, &theta);
    let cov = invert3(&hessian);
    let se_log = [0, 1, 2].map(|k| cov.map_or(f64::NAN, |c| c[k][k].max(0.0).sqrt()));
    let (a, b, c) = (theta[0].exp(), theta[1].exp(), theta[2]);
    Ok(GammaRegionFit {
        a,
        b,
        c,
        se: [a * se_log[0], b * se_log[1], se_log[2]],
        se_log,
        loglik: -best.value,
        iterations: best.iterations,
        observations: obs.len(),
    })
}

/// Central differences of an analytic gradient, symmetrized.
fn numerical_hessian<G: Fn(&[f64]) -> Vec<f64>>(grad: G, x: &[f64]) -> [[f64; 3]; 3] {
    let mut h = [[0.0; 3]; 3];
    for j in 0..3 {
        let step = 1e-5 * x[j].abs().max(1.0);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += step;
        xm[j] -= step;
        let (gp, gm) = (grad(&xp), grad(&xm));
        for i in 0..3 {
            h[i][j] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    for i in 0..3 {
        for j in 0..i {
            let s = 0.5 * (h[i][j] + h[j][i]);
            h[i][j] = s;
            h[j][i] = s;
        }
    }
    h
}

fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let mat = nalgebra::Matrix3::from_fn(|i, j| m[i][j]);
    let inv = mat.try_inverse()?;
    Some([0, 1, 2].map(|i| [0, 1, 2].map(|j| inv[(i, j)])))
}

/// `log Y_t ~ Normal(α* + β* t, σ²)` with `t = 1..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LognormalRegionParams {
    pub alpha_star: f64,
    pub beta_star: f64,
    pub sigma2: f64,
}

impl LognormalRegionParams {
    /// CDF at `y` in year index `t` (0-based).
    pub fn cdf(&self, y: f64, t: usize) -> f64 {
        let m = self.alpha_star + self.beta_star * (t + 1) as f64;
        special::normal_cdf((y.ln() - m) / self.sigma2.sqrt())
    }
}

pub fn fit_region_lognormal(y: &[Option<f64>], ts: &TimeStandardizer) -> Result<LognormalRegionParams, MarginalError> {
    let obs = observed_pairs(y, ts)?;
    let pts: Vec<(f64, f64)> = y
        .iter()
        .enumerate()
        .filter_map(|(t, v)| v.map(|v| ((t + 1) as f64, v.ln())))
        .collect();
    debug_assert_eq!(pts.len(), obs.len());
    let m = pts.len() as f64;
    let tbar = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let lbar = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - tbar).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - tbar) * (p.1 - lbar)).sum();
    let beta_star = sxy / sxx;
    let alpha_star = lbar - beta_star * tbar;
    let rss: f64 = pts.iter().map(|p| (p.1 - alpha_star - beta_star * p.0).powi(2)).sum();
    let sigma2 = rss / m;
    // relative to the spread of log y, residuals at rounding level are zero
    let scale = pts.iter().map(|p| p.1 * p.1).sum::<f64>() / m;
    if sigma2 <= 1e-24 * scale.max(1.0) {
        return Err(MarginalError::DegenerateLognormal { alpha_star, beta_star });
    }
    Ok(LognormalRegionParams { alpha_star, beta_star, sigma2 })
}

/// PIT matrix with the number of clamped cells.
#[derive(Debug, Clone, PartialEq)]
pub struct PitMatrix {
    /// Row-major `n × T`.
    pub u: Vec<Option<f64>>,
    pub t_len: usize,
    pub clamped: usize,
}

impl PitMatrix {
    pub fn get(&self, i: usize, t: usize) -> Option<f64> {
        self.u[i * self.t_len + t]
    }

    pub fn observed(&self) -> Vec<f64> {
        self.u.iter().flatten().copied().collect()
    }
}

pub fn pit_transform(panel: &RegionalPanel, params: &GammaSvcParams, ts: &TimeStandardizer) -> PitMatrix {
    let mut clamped = 0;
    let mut u = Vec::with_capacity(panel.n() * panel.t_len());
    for i in 0..panel.n() {
        for t in 0..panel.t_len() {
            u.push(panel.get(i, t).map(|y| {
                let p = gamma_pq(params.a[i], params.rate(i, ts.t_star[t]) * y).0;
                let pc = p.clamp(PIT_EPS, 1.0 - PIT_EPS);
                if pc != p {
                    clamped += 1;
                }
                pc
            }));
        }
    }
    PitMatrix { u, t_len: panel.t_len(), clamped }
}

/// Latent scores `z_it = Φ⁻¹(u_it)` (row-major, missing preserved) and clamp count.
pub fn latent_scores(panel: &RegionalPanel, params: &GammaSvcParams, ts: &TimeStandardizer) -> (Vec<Option<f64>>, usize) {
    let mut clamped = 0;
    let mut z = Vec::with_capacity(panel.n() * panel.t_len());
    for i in 0..panel.n() {
        for t in 0..panel.t_len() {
            z.push(panel.get(i, t).map(|y| {
                let (s, c) = gamma_latent_score(y, params.a[i], params.rate(i, ts.t_star[t]));
                clamped += c as usize;
                s
            }));
        }
    }
    (z, clamped)
}
