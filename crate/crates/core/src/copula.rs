//! CAR Gaussian copula and the data-layer likelihood.
//!
//! Latent scores `z_it = Φ⁻¹(F(Y_it; a_i, b_i, c_i))` are, within a year,
//! jointly normal with correlation `R = Δ^{-1/2}(M - ρW)⁻¹Δ^{-1/2}`. The
//! copula log-density is evaluated in precision form with
//! `P = R⁻¹ = Δ^{1/2}(M - ρW)Δ^{1/2}`:
//!
//! `log c(z) = ½(log det(M - ρW) + Σ log d_i) - ½ zᵀPz + ½ zᵀz`.
//!
//! `P` inherits the sparsity of `M - ρW`: `P_ii = d_i m_i` and
//! `P_ij = -ρ √(d_i d_j)` on edges, so a year costs `O(n + |E|)` once `Δ`
//! is known.

use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

use crate::gmrf::{self, GmrfError, ScaledCarCorrelation};
use crate::graph::ArealGraph;
use crate::linalg;
use crate::marginals::{self, gamma_logpdf_unchecked, GammaSvcParams, MarginalError, TimeStandardizer};
use crate::panel::{PanelError, RegionalPanel};

/// Upper end of the ρ search range; keeps clear of the intrinsic boundary.
pub const RHO_SEARCH_MAX: f64 = 1.0 - 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CopulaError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("smoothing window must be odd and at most {t_len}, got {window}")]
    InvalidWindow { window: usize, t_len: usize },
    #[error(transparent)]
    Gmrf(#[from] GmrfError),
    #[error(transparent)]
    Marginal(#[from] MarginalError),
    #[error(transparent)]
    Panel(#[from] PanelError),
}

/// Copula log-density of a complete latent vector, from the dense `P`.
pub fn copula_logdensity(z: &[f64], scaled: &ScaledCarCorrelation) -> Result<f64, CopulaError> {
    let n = scaled.dim();
    if z.len() != n {
        return Err(CopulaError::DimensionMismatch { expected: n, actual: z.len() });
    }
    if scaled.rho == 0.0 {
        return Ok(0.0);
    }
    let quad = linalg::bilinear(&scaled.latent_precision, z, z);
    let norm2: f64 = z.iter().map(|v| v * v).sum();
    Ok(scaled.half_log_det_latent_precision() - 0.5 * quad + 0.5 * norm2)
}

/// Sparse form of `P` for repeated evaluation at a fixed ρ.
#[derive(Debug, Clone)]
pub struct SparseCopula {
    pub rho: f64,
    half_log_det: f64,
    /// `P_ii - 1`.
    diag_minus_one: Vec<f64>,
    /// `(i, j, P_ij)` for each edge `i < j`.
    off: Vec<(usize, usize, f64)>,
}

impl SparseCopula {
    pub fn new(scaled: &ScaledCarCorrelation, graph: &ArealGraph) -> Self {
        let degrees = graph.degrees();
        let sd = scaled.sqrt_delta();
        let diag_minus_one = scaled.delta.iter().zip(&degrees).map(|(d, &m)| d * m as f64 - 1.0).collect();
        let off = graph.edges().iter().map(|&(i, j)| (i, j, -scaled.rho * sd[i] * sd[j])).collect();
        Self { rho: scaled.rho, half_log_det: scaled.half_log_det_latent_precision(), diag_minus_one, off }
    }

    pub fn dim(&self) -> usize {
        self.diag_minus_one.len()
    }

    /// `½ zᵀ(P - I)z` subtracted from the log-determinant term.
    pub fn logdensity(&self, z: &[f64]) -> f64 {
        if self.rho == 0.0 {
            return 0.0;
        }
        let mut quad = 0.0;
        for (dm, v) in self.diag_minus_one.iter().zip(z) {
            quad += dm * v * v;
        }
        let mut cross = 0.0;
        for &(i, j, p) in &self.off {
            cross += p * z[i] * z[j];
        }
        self.half_log_det - 0.5 * quad - cross
    }
}

/// Log-density of the observed coordinates of a latent year vector.
///
/// With missing set `I` and observed set `O`, `z_O` has precision
/// `S = P_OO - P_OI P_II⁻¹ P_IO` and `log det R_OO = log det R + log det P_II`.
/// Complete vectors take the sparse path.
pub fn observed_copula_logdensity(z: &[Option<f64>], scaled: &ScaledCarCorrelation, sparse: &SparseCopula) -> f64 {
    if z.iter().all(Option::is_some) {
        let full: Vec<f64> = z.iter().map(|v| v.unwrap()).collect();
        return sparse.logdensity(&full);
    }
    if scaled.rho == 0.0 {
        return 0.0;
    }
    let p = &scaled.latent_precision;
    let obs: Vec<usize> = (0..z.len()).filter(|&i| z[i].is_some()).collect();
    let mis: Vec<usize> = (0..z.len()).filter(|&i| z[i].is_none()).collect();
    if obs.is_empty() {
        return 0.0;
    }
    let zo: Vec<f64> = obs.iter().map(|&i| z[i].unwrap()).collect();
    let p_ii = DMatrix::from_fn(mis.len(), mis.len(), |a, b| p[(mis[a], mis[b])]);
    let l = linalg::cholesky(&p_ii).expect("principal submatrix of a positive definite matrix");
    // quadratic zᵀ_O S z_O = zᵀ_O P_OO z_O - wᵀ P_II⁻¹ w with w = P_IO z_O
    let w: Vec<f64> = mis.iter().map(|&i| obs.iter().zip(&zo).map(|(&j, v)| p[(i, j)] * v).sum()).collect();
    let mut half = w.clone();
    linalg::forward_solve(&l, &mut half);
    let correction: f64 = half.iter().map(|v| v * v).sum();
    let mut quad_oo = 0.0;
    for (a, &i) in obs.iter().enumerate() {
        for (b, &j) in obs.iter().enumerate() {
            quad_oo += zo[a] * p[(i, j)] * zo[b];
        }
    }
    let norm2: f64 = zo.iter().map(|v| v * v).sum();
    let half_log_det_roo_inv = scaled.half_log_det_latent_precision() - 0.5 * linalg::log_det_from_cholesky(&l);
    half_log_det_roo_inv - 0.5 * (quad_oo - correction) + 0.5 * norm2
}

/// Panel log-likelihood and its per-year terms.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLoglik {
    pub total: f64,
    pub per_year: Vec<f64>,
    pub clamped: usize,
}

/// Latent scores arranged by year: `out[t][i]`.
pub fn latent_by_year(panel: &RegionalPanel, params: &GammaSvcParams, ts: &TimeStandardizer) -> (Vec<Vec<Option<f64>>>, usize) {
    let (z, clamped) = marginals::latent_scores(panel, params, ts);
    let (n, t_len) = (panel.n(), panel.t_len());
    let by_year = (0..t_len).map(|t| (0..n).map(|i| z[i * t_len + t]).collect()).collect();
    (by_year, clamped)
}

/// `Σ_t [log c(z_t) + Σ_i log f(y_it)]` over observed cells.
///
/// Years with missing cells contribute the density of their observed part,
/// which is what the data layer assigns to them once the missing cells are
/// integrated out.
pub fn joint_loglik(
    panel: &RegionalPanel,
    graph: &ArealGraph,
    params: &GammaSvcParams,
    ts: &TimeStandardizer,
    rho: f64,
) -> Result<JointLoglik, CopulaError> {
    let n = graph.n();
    for actual in [panel.n(), params.n()] {
        if actual != n {
            return Err(CopulaError::DimensionMismatch { expected: n, actual });
        }
    }
    if panel.t_len() != ts.t_len {
        return Err(CopulaError::DimensionMismatch { expected: ts.t_len, actual: panel.t_len() });
    }
    let scaled = gmrf::scaled_correlation(graph, rho)?;
    let sparse = SparseCopula::new(&scaled, graph);
    let (z, clamped) = latent_by_year(panel, params, ts);
    let mut per_year = Vec::with_capacity(panel.t_len());
    for (t, zt) in z.iter().enumerate() {
        let mut term = observed_copula_logdensity(zt, &scaled, &sparse);
        for i in 0..n {
            if let Some(y) = panel.get(i, t) {
                term += gamma_logpdf_unchecked(y, params.a[i], params.rate(i, ts.t_star[t]));
            }
        }
        per_year.push(term);
    }
    Ok(JointLoglik { total: per_year.iter().sum(), per_year, clamped })
}

/// The copula model at a fixed ρ, with its scaling cached.
#[derive(Debug, Clone)]
pub struct CopulaModel {
    pub graph: ArealGraph,
    pub params: GammaSvcParams,
    pub ts: TimeStandardizer,
    pub scaled: ScaledCarCorrelation,
}

impl CopulaModel {
    pub fn new(graph: ArealGraph, params: GammaSvcParams, ts: TimeStandardizer, rho: f64) -> Result<Self, CopulaError> {
        if params.n() != graph.n() {
            return Err(CopulaError::DimensionMismatch { expected: graph.n(), actual: params.n() });
        }
        let scaled = gmrf::scaled_correlation(&graph, rho)?;
        Ok(Self { graph, params, ts, scaled })
    }

    pub fn rho(&self) -> f64 {
        self.scaled.rho
    }

    pub fn set_rho(&mut self, rho: f64) -> Result<(), CopulaError> {
        self.scaled = gmrf::scaled_correlation(&self.graph, rho)?;
        Ok(())
    }

    pub fn loglik(&self, panel: &RegionalPanel) -> Result<JointLoglik, CopulaError> {
        joint_loglik(panel, &self.graph, &self.params, &self.ts, self.rho())
    }

    pub fn simulate<R: Rng + ?Sized>(&self, rng: &mut R, missing: &[(usize, usize)]) -> RegionalPanel {
        simulate_with(rng, &self.scaled, &self.params, &self.ts, missing)
    }
}

/// Draws a panel: per year `X̃ ~ N(0, (M - ρW)⁻¹)`, `z = Δ^{-1/2}X̃`,
/// `y_it = F⁻¹(Φ(z_it))`; cells in `missing` are then deleted.
pub fn simulate_panel<R: Rng + ?Sized>(
    rng: &mut R,
    graph: &ArealGraph,
    params: &GammaSvcParams,
    ts: &TimeStandardizer,
    rho: f64,
    missing: &[(usize, usize)],
) -> Result<RegionalPanel, CopulaError> {
    if params.n() != graph.n() {
        return Err(CopulaError::DimensionMismatch { expected: graph.n(), actual: params.n() });
    }
    let scaled = gmrf::scaled_correlation(graph, rho)?;
    Ok(simulate_with(rng, &scaled, params, ts, missing))
}

pub(crate) fn simulate_with<R: Rng + ?Sized>(
    rng: &mut R,
    scaled: &ScaledCarCorrelation,
    params: &GammaSvcParams,
    ts: &TimeStandardizer,
    missing: &[(usize, usize)],
) -> RegionalPanel {
    let n = scaled.dim();
    let zero = vec![0.0; n];
    let mut rows = vec![Vec::with_capacity(ts.t_len); n];
    for &t_star in &ts.t_star {
        let x = gmrf::sample_gmrf(rng, &zero, &scaled.chol_l, 1.0);
        for i in 0..n {
            let z = x[i] / scaled.sqrt_delta()[i];
            rows[i].push(marginals::gamma_from_latent(z, params.a[i], params.rate(i, t_star)));
        }
    }
    RegionalPanel::from_rows(rows).expect("gamma draws are positive").with_missing(missing)
}

/// Per-year ρ maximizers and their centered moving average.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoProfile {
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub window: usize,
}

pub fn yearwise_rho_profile(
    panel: &RegionalPanel,
    graph: &ArealGraph,
    params: &GammaSvcParams,
    ts: &TimeStandardizer,
    window: usize,
) -> Result<RhoProfile, CopulaError> {
    let t_len = panel.t_len();
    if window % 2 == 0 || window > t_len {
        return Err(CopulaError::InvalidWindow { window, t_len });
    }
    if panel.n() != graph.n() || params.n() != graph.n() {
        return Err(CopulaError::DimensionMismatch { expected: graph.n(), actual: panel.n() });
    }
    let (z, _) = latent_by_year(panel, params, ts);
    let mut raw = Vec::with_capacity(t_len);
    for zt in &z {
        let objective = |rho: f64| {
            let scaled = gmrf::scaled_correlation(graph, rho).expect("rho inside the proper range");
            let sparse = SparseCopula::new(&scaled, graph);
            observed_copula_logdensity(zt, &scaled, &sparse)
        };
        raw.push(golden_section_max(objective, 0.0, RHO_SEARCH_MAX, 1e-4));
    }
    let smoothed = moving_average(&raw, window);
    Ok(RhoProfile { raw, smoothed, window })
}

/// Maximizer of a unimodal function on `[lo, hi]` to interval width `tol`.
/// The endpoints are candidates too, so monotone objectives return a boundary.
pub fn golden_section_max<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > tol {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        }
    }
    let mid = 0.5 * (a + b);
    let mut best = (mid, f(mid));
    for x in [lo, hi] {
        if (x - mid).abs() <= tol {
            let fx = f(x);
            if fx > best.1 {
                best = (x, fx);
            }
        }
    }
    best.0
}

/// Centered moving average with half-width `window / 2`, truncated at the ends.
pub fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let h = window / 2;
    (0..x.len())
        .map(|t| {
            let lo = t.saturating_sub(h);
            let hi = (t + h).min(x.len() - 1);
            x[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}
