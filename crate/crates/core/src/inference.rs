//! Metropolis-within-Gibbs sampler for the six data-layer × prior-layer variants.
//!
//! Per region `a_i* = log a_i`, `b_i* = log b_i` and `c_i` each carry a
//! prior with mean `μ1` and precision `σ⁻²K`, where `K = I` (INDEP),
//! `M - W` (ICAR) or `M - ρ·W` (CAR). Hyperpriors: `μ ~ N(0, 10²)`,
//! `σ² ~ IG(0.01, 0.01)`, `ρ· ~ U(0, 1)`, and for the CAR data layer
//! `ρ ~ U(0, 1)`.
//!
//! One iteration updates, in order: the `a*`, `b*` and `c` blocks, `ρ`,
//! the three `μ`, the three `σ²`, the three `ρ·`, and the missing cells.
//! Steps that the variant does not have are skipped.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::copula::{self, observed_copula_logdensity, SparseCopula};
use crate::gmrf::{self, ScaledCarCorrelation};
use crate::graph::ArealGraph;
use crate::marginals::{self, GammaSvcParams, TimeStandardizer};
use crate::panel::RegionalPanel;
use crate::rng;
use crate::special::ln_gamma;

/// Prior mean precision `1/10²` and the inverse-gamma constants.
const MU_PRIOR_PRECISION: f64 = 0.01;
const IG_SHAPE: f64 = 0.01;
const IG_RATE: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("invalid chain configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite posterior at initialization: {0}")]
    NonFiniteInitial(String),
    #[error("unknown model `{0}`; expected <indep|car>-<indep|icar|car>")]
    UnknownModel(String),
    #[error("draws csv: {0}")]
    DrawsCsv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DataLayer {
    Indep,
    Car,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PriorLayer {
    Indep,
    Icar,
    Car,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub data_layer: DataLayer,
    pub prior_layer: PriorLayer,
}

impl ModelSpec {
    pub const fn new(data_layer: DataLayer, prior_layer: PriorLayer) -> Self {
        Self { data_layer, prior_layer }
    }

    /// The six variants, Indep data layer first.
    pub fn all() -> [ModelSpec; 6] {
        use DataLayer as D;
        use PriorLayer as P;
        [
            Self::new(D::Indep, P::Indep),
            Self::new(D::Indep, P::Icar),
            Self::new(D::Indep, P::Car),
            Self::new(D::Car, P::Indep),
            Self::new(D::Car, P::Icar),
            Self::new(D::Car, P::Car),
        ]
    }

    pub fn uses_graph(&self) -> bool {
        self.data_layer == DataLayer::Car || self.prior_layer != PriorLayer::Indep
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = match self.data_layer {
            DataLayer::Indep => "Indep",
            DataLayer::Car => "CAR",
        };
        let p = match self.prior_layer {
            PriorLayer::Indep => "Indep",
            PriorLayer::Icar => "ICAR",
            PriorLayer::Car => "CAR",
        };
        write!(f, "{d}-{p}")
    }
}

impl FromStr for ModelSpec {
    type Err = InferenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        let (d, p) = lower.split_once('-').ok_or_else(|| InferenceError::UnknownModel(s.into()))?;
        let data_layer = match d {
            "indep" => DataLayer::Indep,
            "car" => DataLayer::Car,
            _ => return Err(InferenceError::UnknownModel(s.into())),
        };
        let prior_layer = match p {
            "indep" => PriorLayer::Indep,
            "icar" => PriorLayer::Icar,
            "car" => PriorLayer::Car,
            _ => return Err(InferenceError::UnknownModel(s.into())),
        };
        Ok(Self { data_layer, prior_layer })
    }
}

/// Coefficient group of the gamma regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Coef {
    A,
    B,
    C,
}

impl Coef {
    pub const ALL: [Coef; 3] = [Coef::A, Coef::B, Coef::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["a", "b", "c"][self.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefHyper {
    pub mu: f64,
    pub sigma2: f64,
    /// `None` under the INDEP prior, `1` under ICAR.
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperState {
    pub a: CoefHyper,
    pub b: CoefHyper,
    pub c: CoefHyper,
}

impl HyperState {
    pub fn get(&self, which: Coef) -> &CoefHyper {
        match which {
            Coef::A => &self.a,
            Coef::B => &self.b,
            Coef::C => &self.c,
        }
    }

    pub fn get_mut(&mut self, which: Coef) -> &mut CoefHyper {
        match which {
            Coef::A => &mut self.a,
            Coef::B => &mut self.b,
            Coef::C => &mut self.c,
        }
    }
}

/// Robbins–Monro scale adaptation, active during burn-in only.
///
/// After each proposal `log s += (k + 1)^(-decay) (α - target)` with `α` the
/// acceptance probability and `k` the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub enabled: bool,
    pub target_block: f64,
    pub target_scalar: f64,
    pub decay: f64,
    /// Random-walk SDs for the `a*`, `b*`, `c` blocks; `None` derives them
    /// from the per-region MLE standard errors.
    pub initial_block_scale: Option<[f64; 3]>,
    /// Random-walk SD on the logit scale for `ρ` and the `ρ·`.
    pub initial_scalar_scale: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            target_block: 0.234,
            target_scalar: 0.44,
            decay: 0.6,
            initial_block_scale: None,
            initial_scalar_scale: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub adapt: AdaptConfig,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self::paper(0)
    }
}

impl ChainConfig {
    /// 200000 iterations, 40000 burn-in, thin 20: 8000 retained draws.
    pub fn paper(seed: u64) -> Self {
        Self { iterations: 200_000, burn_in: 40_000, thin: 20, seed, adapt: AdaptConfig::default() }
    }

    /// 20000 iterations, 4000 burn-in, thin 5: 3200 retained draws.
    pub fn desk(seed: u64) -> Self {
        Self { iterations: 20_000, burn_in: 4_000, thin: 5, seed, adapt: AdaptConfig::default() }
    }

    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        if self.iterations == 0 || self.thin == 0 {
            return Err(InferenceError::InvalidConfig("iterations and thin must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(InferenceError::InvalidConfig(format!(
                "burn_in ({}) must be below iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.retained() == 0 {
            return Err(InferenceError::InvalidConfig("no draws would be retained".into()));
        }
        let a = &self.adapt;
        let targets_ok = [a.target_block, a.target_scalar].iter().all(|t| *t > 0.0 && *t < 1.0);
        if !targets_ok || !(a.decay > 0.5 && a.decay <= 1.0) || !(a.initial_scalar_scale >= 0.0) {
            return Err(InferenceError::InvalidConfig("adaptation targets in (0,1), decay in (0.5,1]".into()));
        }
        if let Some(s) = a.initial_block_scale {
            if s.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(InferenceError::InvalidConfig("block scales must be finite and non-negative".into()));
            }
        }
        Ok(())
    }
}

/// Prior precision structure `K` up to `σ⁻²`.
#[derive(Debug, Clone)]
pub enum PriorKernel {
    Identity,
    /// `K = M - ρW`.
    Car { degrees: Vec<f64>, edges: Vec<(usize, usize)> },
}

impl PriorKernel {
    pub fn from_graph(graph: &ArealGraph) -> Self {
        Self::Car {
            degrees: graph.degrees().into_iter().map(|m| m as f64).collect(),
            edges: graph.edges().to_vec(),
        }
    }

    /// `(x - μ1)ᵀK(x - μ1)`.
    pub fn quad(&self, x: &[f64], mu: f64, rho: f64) -> f64 {
        match self {
            Self::Identity => x.iter().map(|v| (v - mu) * (v - mu)).sum(),
            Self::Car { degrees, edges } => {
                let diag: f64 = degrees.iter().zip(x).map(|(m, v)| m * (v - mu) * (v - mu)).sum();
                let cross: f64 = edges.iter().map(|&(i, j)| (x[i] - mu) * (x[j] - mu)).sum();
                diag - 2.0 * rho * cross
            }
        }
    }

    /// `1ᵀK1`; for CAR the row sums of `M - ρW` are `(1 - ρ)m_i`.
    pub fn one_k_one(&self, n: usize, rho: f64) -> f64 {
        match self {
            Self::Identity => n as f64,
            Self::Car { degrees, .. } => (1.0 - rho) * degrees.iter().sum::<f64>(),
        }
    }

    /// `1ᵀKx`.
    pub fn one_k_x(&self, x: &[f64], rho: f64) -> f64 {
        match self {
            Self::Identity => x.iter().sum(),
            Self::Car { degrees, .. } => (1.0 - rho) * degrees.iter().zip(x).map(|(m, v)| m * v).sum::<f64>(),
        }
    }
}

/// Mean and variance of the normal full conditional of `μ`.
pub fn mu_full_conditional(x: &[f64], kernel: &PriorKernel, rho: f64, sigma2: f64) -> (f64, f64) {
    let precision = kernel.one_k_one(x.len(), rho) / sigma2 + MU_PRIOR_PRECISION;
    (kernel.one_k_x(x, rho) / sigma2 / precision, 1.0 / precision)
}

pub fn draw_mu<R: Rng + ?Sized>(rng: &mut R, x: &[f64], kernel: &PriorKernel, rho: f64, sigma2: f64) -> f64 {
    let (mean, var) = mu_full_conditional(x, kernel, rho, sigma2);
    mean + var.sqrt() * rng.sample::<f64, _>(StandardNormal)
}

/// Shape and rate of the inverse-gamma full conditional of `σ²`.
pub fn sigma2_full_conditional(x: &[f64], mu: f64, kernel: &PriorKernel, rho: f64) -> (f64, f64) {
    let q = kernel.quad(x, mu, rho);
    debug_assert!(q > -1e-9 * (1.0 + x.iter().map(|v| v * v).sum::<f64>()), "negative quadratic form {q}");
    (0.5 * x.len() as f64 + IG_SHAPE, 0.5 * q.max(0.0) + IG_RATE)
}

pub fn draw_sigma2<R: Rng + ?Sized>(rng: &mut R, x: &[f64], mu: f64, kernel: &PriorKernel, rho: f64) -> f64 {
    let (shape, rate) = sigma2_full_conditional(x, mu, kernel, rho);
    let g: f64 = Gamma::new(shape, 1.0 / rate).expect("positive shape and rate").sample(rng);
    1.0 / g
}

/// Outcome of one Metropolis–Hastings proposal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MhStep {
    pub accepted: bool,
    /// `min(1, ratio)`; 0 for auto-rejected proposals.
    pub alpha: f64,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Random walk on `logit ρ` for a target density on `(0, 1)`.
///
/// `log_target` returns `None` where the target is undefined. The
/// Jacobian `ρ(1 - ρ)` of the logit map is included. Returns the new value,
/// its log target and the step outcome.
pub fn logit_walk_step<R, F>(rng: &mut R, current: f64, current_log_target: f64, scale: f64, mut log_target: F) -> (f64, f64, MhStep)
where
    R: Rng + ?Sized,
    F: FnMut(f64) -> Option<f64>,
{
    let eta = (current / (1.0 - current)).ln() + scale * rng.sample::<f64, _>(StandardNormal);
    let proposal = logistic(eta);
    let reject = (current, current_log_target, MhStep { accepted: false, alpha: 0.0 });
    if !(proposal > 0.0 && proposal < 1.0) {
        return reject;
    }
    let Some(lt) = log_target(proposal).filter(|v| v.is_finite()) else {
        return reject;
    };
    let jac = |r: f64| r.ln() + (1.0 - r).ln();
    let log_ratio = lt - current_log_target + jac(proposal) - jac(current);
    let alpha = log_ratio.exp().min(1.0);
    if rng.random::<f64>().ln() < log_ratio {
        (proposal, lt, MhStep { accepted: true, alpha })
    } else {
        (current, current_log_target, MhStep { accepted: false, alpha })
    }
}

/// Current values of every unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub a_star: Vec<f64>,
    pub b_star: Vec<f64>,
    pub c: Vec<f64>,
    pub rho: Option<f64>,
    pub hyper: HyperState,
    /// Completed panel, year-major: `y[t * n + i]`.
    pub y: Vec<f64>,
}

impl ChainState {
    pub fn coef(&self, which: Coef) -> &[f64] {
        match which {
            Coef::A => &self.a_star,
            Coef::B => &self.b_star,
            Coef::C => &self.c,
        }
    }

    fn coef_mut(&mut self, which: Coef) -> &mut Vec<f64> {
        match which {
            Coef::A => &mut self.a_star,
            Coef::B => &mut self.b_star,
            Coef::C => &mut self.c,
        }
    }

    pub fn params(&self) -> GammaSvcParams {
        GammaSvcParams::from_log(&self.a_star, &self.b_star, &self.c)
    }
}

/// Per-cell data-layer terms at the current state, year-major.
#[derive(Debug, Clone)]
struct LikCache {
    logf: Vec<f64>,
    z: Vec<f64>,
    copula_year: Vec<f64>,
    total: f64,
    clamped: usize,
}

#[derive(Debug, Clone)]
struct CopulaCache {
    scaled: ScaledCarCorrelation,
    sparse: SparseCopula,
}

/// Proposal scales; blocks on the coefficient scale, scalars on the logit scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalScales {
    pub block: [f64; 3],
    pub rho: f64,
    pub rho_prior: [f64; 3],
}

/// Auto-rejections and clamp events seen by a sampler.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerCounters {
    /// Proposals whose likelihood or prior was not finite.
    pub nonfinite_rejections: usize,
    /// Latent scores clamped at the PIT guard, summed over evaluations.
    pub clamp_events: usize,
}

/// Gibbs sampler over one panel and model variant.
pub struct Sampler<'a> {
    panel: &'a RegionalPanel,
    graph: Option<&'a ArealGraph>,
    spec: ModelSpec,
    ts: TimeStandardizer,
    n: usize,
    t_len: usize,
    ln_y: Vec<f64>,
    observed: Vec<bool>,
    /// Years with missing cells and the missing regions.
    missing_by_year: Vec<(usize, Vec<usize>)>,
    kernel: PriorKernel,
    copula: Option<CopulaCache>,
    cache: LikCache,
    state: ChainState,
    pub scales: ProposalScales,
    pub counters: SamplerCounters,
    ignore_data: bool,
}

impl<'a> Sampler<'a> {
    /// Initializes at the per-region MLEs (method of moments where the fit
    /// fails), `ρ = ρ· = 0.5`, `μ` and `σ²` at the coefficient means and
    /// variances, and missing cells at their marginal medians (`z = 0`).
    ///
    /// The graph is touched only when the variant has a CAR data layer or a
    /// spatial prior.
    pub fn new(
        panel: &'a RegionalPanel,
        graph: &'a ArealGraph,
        spec: ModelSpec,
        adapt: &AdaptConfig,
    ) -> Result<Self, InferenceError> {
        let (n, t_len) = (panel.n(), panel.t_len());
        if graph.n() != n {
            return Err(InferenceError::DimensionMismatch { expected: n, actual: graph.n() });
        }
        let ts = TimeStandardizer::new(t_len).map_err(|e| InferenceError::InvalidConfig(e.to_string()))?;
        let mut a_star = Vec::with_capacity(n);
        let mut b_star = Vec::with_capacity(n);
        let mut c = Vec::with_capacity(n);
        let mut se_log = [Vec::new(), Vec::new(), Vec::new()];
        for i in 0..n {
            match marginals::fit_region_gamma(panel.series(i), &ts) {
                Ok(fit) => {
                    a_star.push(fit.a.ln());
                    b_star.push(fit.b.ln());
                    c.push(fit.c);
                    for k in 0..3 {
                        if fit.se_log[k].is_finite() && fit.se_log[k] > 0.0 {
                            se_log[k].push(fit.se_log[k]);
                        }
                    }
                }
                Err(_) => {
                    let (a, b) = moment_start(panel.series(i));
                    a_star.push(a.ln());
                    b_star.push(b.ln());
                    c.push(0.0);
                }
            }
        }
        let coef_hyper = |x: &[f64], rho: Option<f64>| {
            let m = x.iter().sum::<f64>() / n as f64;
            let v = if n > 1 { x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64 } else { 1.0 };
            CoefHyper { mu: m, sigma2: v.max(1e-4), rho }
        };
        let prior_rho = match spec.prior_layer {
            PriorLayer::Indep => None,
            PriorLayer::Icar => Some(1.0),
            PriorLayer::Car => Some(0.5),
        };
        let hyper = HyperState {
            a: coef_hyper(&a_star, prior_rho),
            b: coef_hyper(&b_star, prior_rho),
            c: coef_hyper(&c, prior_rho),
        };
        let kernel = match spec.prior_layer {
            PriorLayer::Indep => PriorKernel::Identity,
            _ => PriorKernel::from_graph(graph),
        };
        let copula = match spec.data_layer {
            DataLayer::Indep => None,
            DataLayer::Car => {
                let scaled = gmrf::scaled_correlation(graph, 0.5)
                    .map_err(|e| InferenceError::NonFiniteInitial(format!("copula scaling: {e}")))?;
                let sparse = SparseCopula::new(&scaled, graph);
                Some(CopulaCache { scaled, sparse })
            }
        };
        let rho = copula.as_ref().map(|_| 0.5);

        let params = GammaSvcParams::from_log(&a_star, &b_star, &c);
        let mut y = vec![0.0; n * t_len];
        let mut observed = vec![false; n * t_len];
        let mut missing_by_year: Vec<(usize, Vec<usize>)> = Vec::new();
        for t in 0..t_len {
            let mut missing = Vec::new();
            for i in 0..n {
                let k = t * n + i;
                match panel.get(i, t) {
                    Some(v) => {
                        y[k] = v;
                        observed[k] = true;
                    }
                    None => {
                        y[k] = marginals::gamma_from_latent(0.0, params.a[i], params.rate(i, ts.t_star[t]));
                        missing.push(i);
                    }
                }
            }
            if !missing.is_empty() {
                missing_by_year.push((t, missing));
            }
        }
        let ln_y = y.iter().map(|v| v.ln()).collect();
        let state = ChainState { a_star, b_star, c, rho, hyper, y };

        let median = |v: &mut Vec<f64>| -> Option<f64> {
            if v.is_empty() {
                return None;
            }
            v.sort_by(f64::total_cmp);
            Some(v[v.len() / 2])
        };
        let spread = [0, 1, 2].map(|k| median(&mut se_log[k]).unwrap_or(0.1) * 2.38 / (n as f64).sqrt());
        let scales = ProposalScales {
            block: adapt.initial_block_scale.unwrap_or(spread),
            rho: adapt.initial_scalar_scale,
            rho_prior: [adapt.initial_scalar_scale; 3],
        };
        let graph = if spec.uses_graph() { Some(graph) } else { None };
        let placeholder = LikCache { logf: Vec::new(), z: Vec::new(), copula_year: Vec::new(), total: 0.0, clamped: 0 };
        let mut sampler = Self {
            panel,
            graph,
            spec,
            ts,
            n,
            t_len,
            ln_y,
            observed,
            missing_by_year,
            kernel,
            copula,
            cache: placeholder,
            state,
            scales,
            counters: SamplerCounters::default(),
            ignore_data: false,
        };
        sampler.cache = sampler
            .evaluate(&sampler.state.a_star, &sampler.state.b_star, &sampler.state.c)
            .ok_or_else(|| InferenceError::NonFiniteInitial(sampler.describe_nonfinite()))?;
        for which in Coef::ALL {
            let lp = sampler.prior_log_kernel(which, sampler.state.coef(which));
            if !lp.is_finite() {
                return Err(InferenceError::NonFiniteInitial(format!("prior kernel of `{}`", which.name())));
            }
        }
        Ok(sampler)
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    /// Replaces the state; caches are rebuilt.
    pub fn set_state(&mut self, state: ChainState) -> Result<(), InferenceError> {
        if let (Some(rho), Some(graph)) = (state.rho, self.graph) {
            let scaled = gmrf::scaled_correlation(graph, rho).map_err(|e| InferenceError::InvalidConfig(e.to_string()))?;
            let sparse = SparseCopula::new(&scaled, graph);
            self.copula = Some(CopulaCache { scaled, sparse });
        }
        self.ln_y = state.y.iter().map(|v| v.ln()).collect();
        self.state = state;
        self.cache = self
            .evaluate(&self.state.a_star, &self.state.b_star, &self.state.c)
            .ok_or_else(|| InferenceError::NonFiniteInitial(self.describe_nonfinite()))?;
        Ok(())
    }

    /// Drops the data layer from every acceptance ratio, so the chain samples the prior.
    #[doc(hidden)]
    pub fn set_ignore_data(&mut self, ignore: bool) {
        self.ignore_data = ignore;
    }

    pub fn spec(&self) -> ModelSpec {
        self.spec
    }

    pub fn missing_cells(&self) -> Vec<(usize, usize)> {
        self.missing_by_year.iter().flat_map(|(t, is)| is.iter().map(move |&i| (i, *t))).collect()
    }

    fn describe_nonfinite(&self) -> String {
        let (n, t_len) = (self.n, self.t_len);
        for i in 0..n {
            for (name, v) in [("a*", self.state.a_star[i]), ("b*", self.state.b_star[i]), ("c", self.state.c[i])] {
                if !v.is_finite() {
                    return format!("{name} of region `{}`", self.panel.labels()[i]);
                }
            }
            for t in 0..t_len {
                let shape = self.state.a_star[i].exp();
                let rate = (self.state.a_star[i] + self.state.b_star[i] + self.state.c[i] * self.ts.t_star[t]).exp();
                let lf = gamma_log_density(self.state.y[t * n + i], self.ln_y[t * n + i], shape, rate, ln_gamma(shape));
                if !lf.is_finite() {
                    return format!("gamma log-density at region `{}`, year {}", self.panel.labels()[i], self.panel.years()[t]);
                }
            }
        }
        "copula log-density".into()
    }

    /// Data-layer terms for the given coefficients on the current completed panel.
    fn evaluate(&self, a_star: &[f64], b_star: &[f64], c: &[f64]) -> Option<LikCache> {
        let (n, t_len) = (self.n, self.t_len);
        let mut logf = vec![0.0; n * t_len];
        let with_z = self.copula.is_some();
        let mut z = if with_z { vec![0.0; n * t_len] } else { Vec::new() };
        let mut clamped = 0;
        let mut sum_logf = 0.0;
        for i in 0..n {
            let shape = a_star[i].exp();
            let lg = ln_gamma(shape);
            let base = a_star[i] + b_star[i];
            for t in 0..t_len {
                let k = t * n + i;
                let rate = (base + c[i] * self.ts.t_star[t]).exp();
                if !(shape > 0.0 && shape.is_finite() && rate > 0.0 && rate.is_finite()) {
                    return None;
                }
                let lf = gamma_log_density(self.state.y[k], self.ln_y[k], shape, rate, lg);
                logf[k] = lf;
                sum_logf += lf;
                if with_z {
                    let (zv, hit) = marginals::gamma_latent_score(self.state.y[k], shape, rate);
                    z[k] = zv;
                    clamped += hit as usize;
                }
            }
        }
        let mut total = sum_logf;
        let mut copula_year = Vec::new();
        if let Some(cop) = &self.copula {
            copula_year = (0..t_len).map(|t| cop.sparse.logdensity(&z[t * n..(t + 1) * n])).collect();
            total += copula_year.iter().sum::<f64>();
        }
        total.is_finite().then_some(LikCache { logf, z, copula_year, total, clamped })
    }

    fn prior_rho(&self, which: Coef) -> f64 {
        self.state.hyper.get(which).rho.unwrap_or(0.0)
    }

    /// `-½σ⁻²(x - μ1)ᵀK(x - μ1)`.
    fn prior_log_kernel(&self, which: Coef, x: &[f64]) -> f64 {
        let h = self.state.hyper.get(which);
        -0.5 * self.kernel.quad(x, h.mu, self.prior_rho(which)) / h.sigma2
    }

    /// Joint random-walk proposal for one coefficient block.
    pub fn update_svc_block<R: Rng + ?Sized>(&mut self, which: Coef, rng: &mut R) -> MhStep {
        let scale = self.scales.block[which.index()];
        let current = self.state.coef(which);
        let proposal: Vec<f64> = current.iter().map(|v| v + scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let d_prior = self.prior_log_kernel(which, &proposal) - self.prior_log_kernel(which, current);
        let (mut a, mut b, mut c) = (None, None, None);
        match which {
            Coef::A => a = Some(proposal.as_slice()),
            Coef::B => b = Some(proposal.as_slice()),
            Coef::C => c = Some(proposal.as_slice()),
        }
        let candidate = if self.ignore_data {
            Some(self.cache.clone())
        } else {
            self.evaluate(
                a.unwrap_or(&self.state.a_star),
                b.unwrap_or(&self.state.b_star),
                c.unwrap_or(&self.state.c),
            )
        };
        let Some(candidate) = candidate.filter(|_| d_prior.is_finite()) else {
            self.counters.nonfinite_rejections += 1;
            return MhStep { accepted: false, alpha: 0.0 };
        };
        self.counters.clamp_events += candidate.clamped;
        let log_ratio = candidate.total - self.cache.total + d_prior;
        let alpha = log_ratio.exp().min(1.0);
        if rng.random::<f64>().ln() < log_ratio {
            *self.state.coef_mut(which) = proposal;
            if !self.ignore_data {
                self.cache = candidate;
            }
            MhStep { accepted: true, alpha }
        } else {
            MhStep { accepted: false, alpha }
        }
    }

    /// Logit random walk for the copula parameter `ρ` (CAR data layer only).
    pub fn update_rho_data<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<MhStep> {
        let (Some(rho), Some(graph)) = (self.state.rho, self.graph) else {
            return None;
        };
        self.copula.as_ref()?;
        let (n, t_len) = (self.n, self.t_len);
        let current_lt = if self.ignore_data { 0.0 } else { self.cache.copula_year.iter().sum::<f64>() };
        let z = &self.cache.z;
        let ignore = self.ignore_data;
        let mut fresh: Option<(CopulaCache, Vec<f64>)> = None;
        let (new_rho, _, step) = logit_walk_step(rng, rho, current_lt, self.scales.rho, |r| {
            let scaled = gmrf::scaled_correlation(graph, r).ok()?;
            let sparse = SparseCopula::new(&scaled, graph);
            let years: Vec<f64> =
                if ignore { Vec::new() } else { (0..t_len).map(|t| sparse.logdensity(&z[t * n..(t + 1) * n])).collect() };
            let lt = years.iter().sum::<f64>();
            fresh = Some((CopulaCache { scaled, sparse }, years));
            Some(lt)
        });
        if step.accepted {
            let (cop, years) = fresh.expect("accepted proposals were evaluated");
            self.state.rho = Some(new_rho);
            self.copula = Some(cop);
            if !self.ignore_data {
                let old: f64 = self.cache.copula_year.iter().sum();
                let new: f64 = years.iter().sum();
                self.cache.total += new - old;
                self.cache.copula_year = years;
            }
        } else if step.alpha == 0.0 && fresh.is_none() {
            self.counters.nonfinite_rejections += 1;
        }
        Some(step)
    }

    pub fn update_mu<R: Rng + ?Sized>(&mut self, which: Coef, rng: &mut R) {
        let rho = self.prior_rho(which);
        let h = *self.state.hyper.get(which);
        let mu = draw_mu(rng, self.state.coef(which), &self.kernel, rho, h.sigma2);
        self.state.hyper.get_mut(which).mu = mu;
    }

    pub fn update_sigma2<R: Rng + ?Sized>(&mut self, which: Coef, rng: &mut R) {
        let rho = self.prior_rho(which);
        let h = *self.state.hyper.get(which);
        let s2 = draw_sigma2(rng, self.state.coef(which), h.mu, &self.kernel, rho);
        self.state.hyper.get_mut(which).sigma2 = s2;
    }

    /// Logit random walk for `ρ·` under the CAR prior, targeting the proper
    /// CAR density of the coefficient vector.
    pub fn update_rho_prior<R: Rng + ?Sized>(&mut self, which: Coef, rng: &mut R) -> Option<MhStep> {
        if self.spec.prior_layer != PriorLayer::Car {
            return None;
        }
        let graph = self.graph?;
        let h = *self.state.hyper.get(which);
        let x = self.state.coef(which);
        let mean = vec![h.mu; x.len()];
        let log_target = |r: f64| {
            let q = gmrf::build_precision(graph, r, h.sigma2).ok()?;
            gmrf::gmrf_logpdf(x, &mean, &q).ok().map(|d| d.value)
        };
        let current = log_target(h.rho.expect("CAR prior carries ρ·"))?;
        let scale = self.scales.rho_prior[which.index()];
        let (new_rho, _, step) = logit_walk_step(rng, h.rho.unwrap(), current, scale, log_target);
        self.state.hyper.get_mut(which).rho = Some(new_rho);
        Some(step)
    }

    /// Redraws every missing cell from its full conditional.
    ///
    /// CAR layer: `z_I | z_O ~ N(-P_II⁻¹P_IO z_O, P_II⁻¹)` on the latent
    /// scale, then `y = F⁻¹(Φ(z))`; a year with no observed cell takes an
    /// unconditional copula draw. INDEP layer: marginal gamma draws.
    pub fn impute_missing<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let n = self.n;
        for idx in 0..self.missing_by_year.len() {
            let t = self.missing_by_year[idx].0;
            let missing = self.missing_by_year[idx].1.clone();
            let t_star = self.ts.t_star[t];
            let shape_rate = |s: &ChainState, i: usize| {
                (s.a_star[i].exp(), (s.a_star[i] + s.b_star[i] + s.c[i] * t_star).exp())
            };
            let draws: Vec<f64> = match &self.copula {
                None => missing
                    .iter()
                    .map(|&i| {
                        let (shape, rate) = shape_rate(&self.state, i);
                        let g: f64 = Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters").sample(rng);
                        g.max(f64::MIN_POSITIVE)
                    })
                    .collect(),
                Some(cop) => {
                    let obs_idx: Vec<usize> = (0..n).filter(|i| !missing.contains(i)).collect();
                    let zs: Vec<f64> = if obs_idx.is_empty() {
                        let x = gmrf::sample_gmrf(rng, &vec![0.0; n], &cop.scaled.chol_l, 1.0);
                        missing.iter().map(|&i| x[i] / cop.scaled.sqrt_delta()[i]).collect()
                    } else {
                        let z_obs: Vec<f64> = obs_idx.iter().map(|&i| self.cache.z[t * n + i]).collect();
                        gmrf::conditional_from_precision(&cop.scaled.latent_precision, &obs_idx, &z_obs)
                            .expect("principal submatrix of a positive definite matrix")
                            .sample(rng)
                    };
                    missing
                        .iter()
                        .zip(&zs)
                        .map(|(&i, &zv)| {
                            let (shape, rate) = shape_rate(&self.state, i);
                            marginals::gamma_from_latent(zv, shape, rate).max(f64::MIN_POSITIVE)
                        })
                        .collect()
                }
            };
            for (&i, &y) in missing.iter().zip(&draws) {
                debug_assert!(y > 0.0 && y.is_finite());
                let k = t * n + i;
                self.state.y[k] = y;
                self.ln_y[k] = y.ln();
                let (shape, rate) = shape_rate(&self.state, i);
                let lf = gamma_log_density(y, self.ln_y[k], shape, rate, ln_gamma(shape));
                self.cache.total += lf - self.cache.logf[k];
                self.cache.logf[k] = lf;
                if self.copula.is_some() {
                    self.cache.z[k] = marginals::gamma_latent_score(y, shape, rate).0;
                }
            }
            if let Some(cop) = &self.copula {
                let new = cop.sparse.logdensity(&self.cache.z[t * n..(t + 1) * n]);
                self.cache.total += new - self.cache.copula_year[t];
                self.cache.copula_year[t] = new;
            }
        }
    }

    /// Observed-data log-likelihood of each year at the current state.
    ///
    /// Missing cells are integrated out: the gamma terms of observed cells
    /// plus the copula density of the observed latent coordinates.
    pub fn pointwise_loglik(&self) -> Vec<f64> {
        let n = self.n;
        (0..self.t_len)
            .map(|t| {
                let mut s = 0.0;
                for i in 0..n {
                    if self.observed[t * n + i] {
                        s += self.cache.logf[t * n + i];
                    }
                }
                if let Some(cop) = &self.copula {
                    let complete = (0..n).all(|i| self.observed[t * n + i]);
                    s += if complete {
                        self.cache.copula_year[t]
                    } else {
                        let z: Vec<Option<f64>> =
                            (0..n).map(|i| self.observed[t * n + i].then(|| self.cache.z[t * n + i])).collect();
                        observed_copula_logdensity(&z, &cop.scaled, &cop.sparse)
                    };
                }
                s
            })
            .collect()
    }

    /// One full Gibbs cycle; returns the step outcomes for adaptation.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> CycleSteps {
        let block = Coef::ALL.map(|w| self.update_svc_block(w, rng));
        let rho = self.update_rho_data(rng);
        for w in Coef::ALL {
            self.update_mu(w, rng);
        }
        for w in Coef::ALL {
            self.update_sigma2(w, rng);
        }
        let rho_prior = Coef::ALL.map(|w| self.update_rho_prior(w, rng));
        self.impute_missing(rng);
        CycleSteps { block, rho, rho_prior }
    }
}

/// Step outcomes of one Gibbs cycle.
#[derive(Debug, Clone, Copy)]
pub struct CycleSteps {
    pub block: [MhStep; 3],
    pub rho: Option<MhStep>,
    pub rho_prior: [Option<MhStep>; 3],
}

#[inline]
fn gamma_log_density(y: f64, ln_y: f64, shape: f64, rate: f64, ln_gamma_shape: f64) -> f64 {
    shape * rate.ln() - ln_gamma_shape + (shape - 1.0) * ln_y - rate * y
}

fn moment_start(y: &[Option<f64>]) -> (f64, f64) {
    let obs: Vec<f64> = y.iter().flatten().copied().collect();
    if obs.is_empty() {
        return (1.0, 1.0);
    }
    let m = obs.iter().sum::<f64>() / obs.len() as f64;
    let v = obs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / obs.len() as f64;
    let a = if v > 0.0 { (m * m / v).clamp(1e-2, 1e4) } else { 1.0 };
    (a, 1.0 / m)
}

/// One retained draw on the natural scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub rho: Option<f64>,
    pub hyper: HyperState,
}

/// Post-burn-in acceptance rates; `None` for steps the variant lacks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRates {
    pub a_star: f64,
    pub b_star: f64,
    pub c: f64,
    pub rho: Option<f64>,
    pub rho_a: Option<f64>,
    pub rho_b: Option<f64>,
    pub rho_c: Option<f64>,
}

/// Retained draws of one missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputedCell {
    pub region: usize,
    pub year_index: usize,
    pub draws: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub spec: ModelSpec,
    pub config: ChainConfig,
    pub n: usize,
    pub t_len: usize,
    pub draws: Vec<Draw>,
    pub acceptance: AcceptanceRates,
    pub imputed: Vec<ImputedCell>,
    /// Retained draws × years.
    pub pointwise: Vec<Vec<f64>>,
    /// `-2 Σ_t pointwise`.
    pub deviance: Vec<f64>,
    pub counters: SamplerCounters,
    /// Scales frozen at the end of burn-in.
    pub final_scales: ProposalScales,
}

/// Scale on which posterior means are taken for the DIC plug-in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PlugIn {
    /// Means of `a_i`, `b_i`, `c_i`, `ρ`.
    #[default]
    Natural,
    /// `exp` of the means of `a_i*`, `b_i*`; `c_i` and `ρ` unchanged.
    Log,
}

impl ChainOutput {
    /// Column names of the draws table.
    pub fn column_names(&self) -> Vec<String> {
        let n = self.n;
        let mut names = Vec::new();
        for g in ["a", "b", "c"] {
            names.extend((1..=n).map(|i| format!("{g}_{i}")));
        }
        if self.spec.data_layer == DataLayer::Car {
            names.push("rho".into());
        }
        for prefix in ["mu", "sig2"] {
            names.extend(["a", "b", "c"].map(|g| format!("{prefix}_{g}")));
        }
        if self.spec.prior_layer == PriorLayer::Car {
            names.extend(["rho_a", "rho_b", "rho_c"].map(String::from));
        }
        names
    }

    /// Draws as rows in the order of [`column_names`](Self::column_names).
    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.draws
            .iter()
            .map(|d| {
                let mut row = Vec::with_capacity(3 * self.n + 10);
                row.extend(&d.a);
                row.extend(&d.b);
                row.extend(&d.c);
                if self.spec.data_layer == DataLayer::Car {
                    row.push(d.rho.unwrap_or(f64::NAN));
                }
                let h = [d.hyper.a, d.hyper.b, d.hyper.c];
                row.extend(h.iter().map(|x| x.mu));
                row.extend(h.iter().map(|x| x.sigma2));
                if self.spec.prior_layer == PriorLayer::Car {
                    row.extend(h.iter().map(|x| x.rho.unwrap_or(f64::NAN)));
                }
                row
            })
            .collect()
    }

    pub fn table(&self) -> DrawTable {
        DrawTable { names: self.column_names(), rows: self.rows() }
    }

    /// Posterior means of the marginal parameters and `ρ`.
    pub fn posterior_mean(&self, plug_in: PlugIn) -> (GammaSvcParams, Option<f64>) {
        let m = self.draws.len() as f64;
        let mean_of = |f: &dyn Fn(&Draw) -> f64| self.draws.iter().map(f).sum::<f64>() / m;
        let n = self.n;
        let (a, b): (Vec<f64>, Vec<f64>) = match plug_in {
            PlugIn::Natural => ((0..n).map(|i| mean_of(&|d| d.a[i])).collect(), (0..n).map(|i| mean_of(&|d| d.b[i])).collect()),
            PlugIn::Log => (
                (0..n).map(|i| mean_of(&|d| d.a[i].ln()).exp()).collect(),
                (0..n).map(|i| mean_of(&|d| d.b[i].ln()).exp()).collect(),
            ),
        };
        let c = (0..n).map(|i| mean_of(&|d| d.c[i])).collect();
        let rho = (self.spec.data_layer == DataLayer::Car).then(|| mean_of(&|d| d.rho.unwrap_or(f64::NAN)));
        (GammaSvcParams { a, b, c }, rho)
    }
}

/// Observed-data deviance `-2 log f(y_obs | θ)` of a fixed parameter set.
///
/// The graph is touched only for a CAR data layer.
pub fn plugin_deviance(
    panel: &RegionalPanel,
    graph: &ArealGraph,
    data_layer: DataLayer,
    params: &GammaSvcParams,
    rho: Option<f64>,
) -> Result<f64, InferenceError> {
    let ts = TimeStandardizer::new(panel.t_len()).map_err(|e| InferenceError::InvalidConfig(e.to_string()))?;
    match (data_layer, rho) {
        (DataLayer::Car, Some(rho)) => copula::joint_loglik(panel, graph, params, &ts, rho)
            .map(|j| -2.0 * j.total)
            .map_err(|e| InferenceError::InvalidConfig(e.to_string())),
        (DataLayer::Car, None) => Err(InferenceError::InvalidConfig("CAR data layer needs ρ".into())),
        (DataLayer::Indep, _) => {
            let mut total = 0.0;
            for i in 0..panel.n() {
                for t in 0..panel.t_len() {
                    if let Some(y) = panel.get(i, t) {
                        total += marginals::gamma_logpdf_unchecked(y, params.a[i], params.rate(i, ts.t_star[t]));
                    }
                }
            }
            Ok(-2.0 * total)
        }
    }
}

/// Runs one chain. Deterministic in `config.seed`.
pub fn run_chain(
    panel: &RegionalPanel,
    graph: &ArealGraph,
    spec: ModelSpec,
    config: &ChainConfig,
) -> Result<ChainOutput, InferenceError> {
    config.validate()?;
    let mut sampler = Sampler::new(panel, graph, spec, &config.adapt)?;
    let mut rng = rng::stream(config.seed, &[]);
    let missing = sampler.missing_cells();
    let mut imputed: Vec<ImputedCell> = missing
        .iter()
        .map(|&(region, year_index)| ImputedCell { region, year_index, draws: Vec::with_capacity(config.retained()) })
        .collect();
    let mut draws = Vec::with_capacity(config.retained());
    let mut pointwise = Vec::with_capacity(config.retained());
    let mut deviance = Vec::with_capacity(config.retained());
    let mut tally = Tally::default();
    let adapt = config.adapt;

    for k in 1..=config.iterations {
        let steps = sampler.step(&mut rng);
        if k <= config.burn_in {
            if adapt.enabled {
                let gain = ((k + 1) as f64).powf(-adapt.decay);
                let tune = |s: &mut f64, alpha: f64, target: f64| *s *= (gain * (alpha - target)).exp();
                for w in 0..3 {
                    tune(&mut sampler.scales.block[w], steps.block[w].alpha, adapt.target_block);
                    if let Some(st) = steps.rho_prior[w] {
                        tune(&mut sampler.scales.rho_prior[w], st.alpha, adapt.target_scalar);
                    }
                }
                if let Some(st) = steps.rho {
                    tune(&mut sampler.scales.rho, st.alpha, adapt.target_scalar);
                }
            }
            continue;
        }
        tally.record(&steps);
        if (k - config.burn_in) % config.thin != 0 {
            continue;
        }
        let s = sampler.state();
        let params = s.params();
        draws.push(Draw { a: params.a, b: params.b, c: params.c, rho: s.rho, hyper: s.hyper });
        let n = panel.n();
        for cell in imputed.iter_mut() {
            cell.draws.push(s.y[cell.year_index * n + cell.region]);
        }
        let pw = sampler.pointwise_loglik();
        deviance.push(-2.0 * pw.iter().sum::<f64>());
        pointwise.push(pw);
    }

    Ok(ChainOutput {
        spec,
        config: *config,
        n: panel.n(),
        t_len: panel.t_len(),
        draws,
        acceptance: tally.rates(),
        imputed,
        pointwise,
        deviance,
        counters: sampler.counters,
        final_scales: sampler.scales,
    })
}

#[derive(Debug, Default)]
struct Tally {
    iterations: usize,
    block: [usize; 3],
    rho: Option<usize>,
    rho_prior: [Option<usize>; 3],
}

impl Tally {
    fn record(&mut self, steps: &CycleSteps) {
        self.iterations += 1;
        for w in 0..3 {
            self.block[w] += steps.block[w].accepted as usize;
            if let Some(st) = steps.rho_prior[w] {
                *self.rho_prior[w].get_or_insert(0) += st.accepted as usize;
            }
        }
        if let Some(st) = steps.rho {
            *self.rho.get_or_insert(0) += st.accepted as usize;
        }
    }

    fn rates(&self) -> AcceptanceRates {
        let m = self.iterations.max(1) as f64;
        let r = |c: usize| c as f64 / m;
        AcceptanceRates {
            a_star: r(self.block[0]),
            b_star: r(self.block[1]),
            c: r(self.block[2]),
            rho: self.rho.map(r),
            rho_a: self.rho_prior[0].map(r),
            rho_b: self.rho_prior[1].map(r),
            rho_c: self.rho_prior[2].map(r),
        }
    }
}

/// Named columns of retained draws, as exported to CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawTable {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl DrawTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.names.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    /// Values are written in shortest round-trip form.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.names)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format!("{v:?}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, InferenceError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let names: Vec<String> =
            rdr.headers().map_err(|e| InferenceError::DrawsCsv(e.to_string()))?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| InferenceError::DrawsCsv(e.to_string()))?;
            let row = record
                .iter()
                .map(|v| v.parse::<f64>().map_err(|_| InferenceError::DrawsCsv(format!("line {}: `{v}`", line + 2))))
                .collect::<Result<Vec<_>, _>>()?;
            if row.len() != names.len() {
                return Err(InferenceError::DrawsCsv(format!("line {} has {} fields", line + 2, row.len())));
            }
            rows.push(row);
        }
        Ok(Self { names, rows })
    }
}
