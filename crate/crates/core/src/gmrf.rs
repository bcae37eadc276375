//! CAR precision algebra.
//!
//! The CAR field with autocorrelation `ρ` and scale `σ²` has precision
//! `Q = σ⁻²(M - ρW)`. For `ρ < 1` on a connected graph `M - ρW` is strictly
//! diagonally dominant, hence positive definite; at `ρ = 1` it is the graph
//! Laplacian with null space spanned by `1`.
//!
//! The copula needs the diagonal `d_i` of `(M - ρW)⁻¹`. With `M - ρW = LLᵀ`
//! and `Z = L⁻¹`, `(M - ρW)⁻¹ = ZᵀZ`, so `d_j` is the squared norm of
//! column `j` of `Z`. No dense inverse is formed.
//!
//! Conditionals are taken from precision partitions: for a missing block
//! `I` given the rest, the conditional precision is `P_II` and the
//! conditional mean is `-P_II⁻¹ P_IĪ x_Ī`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::graph::ArealGraph;
use crate::linalg::{self, LinalgError};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GmrfError {
    #[error("autocorrelation {0} outside [0, 1]")]
    RhoOutOfRange(f64),
    #[error("scaled correlation needs rho in [0, 1), got {0}")]
    ImproperRho(f64),
    #[error("variance scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("conditioning set must be a nonempty proper subset of the {n} coordinates")]
    InvalidConditioningSet { n: usize },
    #[error("observed index {index} out of range or repeated")]
    BadIndex { index: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// `Q = σ⁻²(M - ρW)` on a graph.
#[derive(Debug, Clone)]
pub struct CarPrecision {
    pub rho: f64,
    pub sigma2: f64,
    pub q: DMatrix<f64>,
    /// Cholesky factor of `Q` and its log-determinant, for proper fields only.
    factor: Option<(DMatrix<f64>, f64)>,
}

impl CarPrecision {
    pub fn is_proper(&self) -> bool {
        self.factor.is_some()
    }

    pub fn log_det(&self) -> Option<f64> {
        self.factor.as_ref().map(|(_, ld)| *ld)
    }

    pub fn cholesky(&self) -> Option<&DMatrix<f64>> {
        self.factor.as_ref().map(|(l, _)| l)
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }
}

pub fn build_precision(graph: &ArealGraph, rho: f64, sigma2: f64) -> Result<CarPrecision, GmrfError> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(GmrfError::RhoOutOfRange(rho));
    }
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(GmrfError::NonPositiveScale(sigma2));
    }
    let q = graph.car_kernel(rho) / sigma2;
    let factor = if rho < 1.0 {
        let l = linalg::cholesky(&q)?;
        let ld = linalg::log_det_from_cholesky(&l);
        Some((l, ld))
    } else {
        None
    };
    Ok(CarPrecision { rho, sigma2, q, factor })
}

/// Unit-diagonal scaling of a proper CAR field with unit variance scale.
#[derive(Debug, Clone)]
pub struct ScaledCarCorrelation {
    pub rho: f64,
    /// Lower Cholesky factor of `M - ρW`.
    pub chol_l: DMatrix<f64>,
    /// `d_i`, diagonal of `(M - ρW)⁻¹`.
    pub delta: Vec<f64>,
    /// `log det(M - ρW)`.
    pub log_det: f64,
    /// Precision of the latent scores, `Δ^{1/2}(M - ρW)Δ^{1/2}`.
    pub latent_precision: DMatrix<f64>,
    sqrt_delta: Vec<f64>,
}

impl ScaledCarCorrelation {
    pub fn dim(&self) -> usize {
        self.delta.len()
    }

    /// `½(log det(M - ρW) + Σ log d_i)`, i.e. `-½ log det R`.
    pub fn half_log_det_latent_precision(&self) -> f64 {
        0.5 * (self.log_det + self.delta.iter().map(|d| d.ln()).sum::<f64>())
    }

    /// `√d_i`, the latent-to-CAR scale factors.
    pub fn sqrt_delta(&self) -> &[f64] {
        &self.sqrt_delta
    }

    /// Dense correlation matrix `R`. Formed only for checks and small problems.
    pub fn correlation_matrix(&self) -> DMatrix<f64> {
        let z = linalg::lower_inverse(&self.chol_l);
        let cov = z.transpose() * z;
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| cov[(i, j)] / (self.sqrt_delta[i] * self.sqrt_delta[j]))
    }
}

pub fn scaled_correlation(graph: &ArealGraph, rho: f64) -> Result<ScaledCarCorrelation, GmrfError> {
    if !(0.0..1.0).contains(&rho) {
        return Err(GmrfError::ImproperRho(rho));
    }
    let kernel = graph.car_kernel(rho);
    let chol_l = linalg::cholesky(&kernel)?;
    let log_det = linalg::log_det_from_cholesky(&chol_l);
    let z = linalg::lower_inverse(&chol_l);
    let n = kernel.nrows();
    let delta: Vec<f64> = (0..n).map(|j| (j..n).map(|i| z[(i, j)] * z[(i, j)]).sum()).collect();
    let sqrt_delta: Vec<f64> = delta.iter().map(|d| d.sqrt()).collect();
    let latent_precision =
        DMatrix::from_fn(n, n, |i, j| sqrt_delta[i] * kernel[(i, j)] * sqrt_delta[j]);
    Ok(ScaledCarCorrelation { rho, chol_l, delta, log_det, latent_precision, sqrt_delta })
}

/// GMRF log-density. For an intrinsic field the value is the unnormalized
/// kernel `-½(x - μ)ᵀQ(x - μ)` and `proper` is false.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmrfDensity {
    pub value: f64,
    pub proper: bool,
}

pub fn gmrf_logpdf(x: &[f64], mean: &[f64], precision: &CarPrecision) -> Result<GmrfDensity, GmrfError> {
    let n = precision.dim();
    for len in [x.len(), mean.len()] {
        if len != n {
            return Err(GmrfError::DimensionMismatch { expected: n, actual: len });
        }
    }
    let r: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    let kernel = -0.5 * linalg::bilinear(&precision.q, &r, &r);
    Ok(match precision.log_det() {
        Some(ld) => GmrfDensity { value: 0.5 * ld - 0.5 * n as f64 * LN_2PI + kernel, proper: true },
        None => GmrfDensity { value: kernel, proper: false },
    })
}

/// Exact draw `mean + scale · L⁻ᵀε` from the field with precision `LLᵀ / scale²`.
pub fn sample_gmrf<R: Rng + ?Sized>(rng: &mut R, mean: &[f64], chol_l: &DMatrix<f64>, scale: f64) -> Vec<f64> {
    let mut eps: Vec<f64> = (0..chol_l.nrows()).map(|_| rng.sample(StandardNormal)).collect();
    linalg::backward_solve_transpose(chol_l, &mut eps);
    eps.iter().zip(mean).map(|(e, m)| m + scale * e).collect()
}

/// Gaussian conditional of a missing block given the observed coordinates.
#[derive(Debug, Clone)]
pub struct GaussianConditional {
    pub missing_idx: Vec<usize>,
    pub mean: Vec<f64>,
    /// Conditional precision `P_II` (the covariance is its inverse).
    pub precision: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl GaussianConditional {
    pub fn covariance(&self) -> DMatrix<f64> {
        let z = linalg::lower_inverse(&self.chol);
        z.transpose() * z
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        sample_gmrf(rng, &self.mean, &self.chol, 1.0)
    }
}

/// Conditions a zero-mean Gaussian with precision `p` on `x[observed_idx] = observed_vals`.
pub fn conditional_from_precision(
    p: &DMatrix<f64>,
    observed_idx: &[usize],
    observed_vals: &[f64],
) -> Result<GaussianConditional, GmrfError> {
    let n = p.nrows();
    if observed_idx.len() != observed_vals.len() {
        return Err(GmrfError::DimensionMismatch { expected: observed_idx.len(), actual: observed_vals.len() });
    }
    if observed_idx.is_empty() || observed_idx.len() >= n {
        return Err(GmrfError::InvalidConditioningSet { n });
    }
    let mut is_observed = vec![false; n];
    for &i in observed_idx {
        if i >= n || is_observed[i] {
            return Err(GmrfError::BadIndex { index: i });
        }
        is_observed[i] = true;
    }
    let missing_idx: Vec<usize> = (0..n).filter(|&i| !is_observed[i]).collect();
    let k = missing_idx.len();
    let precision = DMatrix::from_fn(k, k, |a, b| p[(missing_idx[a], missing_idx[b])]);
    let chol = linalg::cholesky(&precision)?;
    // rhs = P_IĪ x_Ī
    let rhs: Vec<f64> = missing_idx
        .iter()
        .map(|&i| observed_idx.iter().zip(observed_vals).map(|(&j, &v)| p[(i, j)] * v).sum())
        .collect();
    let mean: Vec<f64> = linalg::cholesky_solve(&chol, &rhs).into_iter().map(|v| -v).collect();
    Ok(GaussianConditional { missing_idx, mean, precision, chol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn edge2() -> ArealGraph {
        ArealGraph::from_edges(&[(1, 2)], 2).unwrap()
    }

    #[test]
    fn two_node_precision() {
        let p = build_precision(&edge2(), 0.5, 1.0).unwrap();
        assert_eq!(p.q, DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 1.0]));
    }

    #[test]
    fn rho_zero_is_degree_matrix() {
        let g = ArealGraph::from_edges(&[(1, 2), (2, 3)], 3).unwrap();
        let p = build_precision(&g, 0.0, 1.0).unwrap();
        assert_eq!(p.q, g.degree_matrix());
    }

    #[test]
    fn icar_annihilates_constants() {
        let g = ArealGraph::from_edges(&[(1, 2), (2, 3), (3, 1), (3, 4)], 4).unwrap();
        let ones = nalgebra::DVector::from_element(4, 1.0);
        let p = build_precision(&g, 1.0, 1.0).unwrap();
        assert!(!p.is_proper());
        assert_eq!((&p.q * &ones).abs().max(), 0.0);
        let p = build_precision(&g, 1.0, 2.5).unwrap();
        assert!((&p.q * &ones).abs().max() < 1e-15);
    }

    #[test]
    fn precision_validation() {
        let g = edge2();
        assert_eq!(build_precision(&g, 1.1, 1.0).unwrap_err(), GmrfError::RhoOutOfRange(1.1));
        assert_eq!(build_precision(&g, -0.1, 1.0).unwrap_err(), GmrfError::RhoOutOfRange(-0.1));
        assert_eq!(build_precision(&g, 0.5, 0.0).unwrap_err(), GmrfError::NonPositiveScale(0.0));
        assert_eq!(scaled_correlation(&g, 1.0).unwrap_err(), GmrfError::ImproperRho(1.0));
    }

    #[test]
    fn two_node_scaling() {
        // (M - ρW)⁻¹ = [[1, .5], [.5, 1]] / 0.75
        let s = scaled_correlation(&edge2(), 0.5).unwrap();
        for d in &s.delta {
            assert!((d - 4.0 / 3.0).abs() < 1e-15);
        }
        assert!((s.log_det - 0.75f64.ln()).abs() < 1e-15);
        let r = s.correlation_matrix();
        assert!((r[(0, 1)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rho_zero_delta_is_inverse_degree() {
        let g = ArealGraph::from_edges(&[(1, 2), (2, 3), (3, 4), (2, 4)], 4).unwrap();
        let s = scaled_correlation(&g, 0.0).unwrap();
        for (d, m) in s.delta.iter().zip(g.degrees()) {
            assert!((d - 1.0 / m as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn logpdf_cases() {
        let g = edge2();
        let p0 = build_precision(&g, 0.0, 1.0).unwrap();
        let v = gmrf_logpdf(&[0.3, 0.3], &[0.3, 0.3], &p0).unwrap();
        // ½ log det M - log 2π with M = I
        assert!((v.value + LN_2PI).abs() < 1e-14);

        let p = build_precision(&g, 0.5, 1.0).unwrap();
        let v = gmrf_logpdf(&[1.0, 0.0], &[0.0, 0.0], &p).unwrap();
        let expected = -LN_2PI + 0.5 * 0.75f64.ln() - 0.5;
        assert!((v.value - expected).abs() < 1e-14);

        let icar = build_precision(&g, 1.0, 1.0).unwrap();
        for alpha in [-3.0, 0.0, 7.5] {
            let v = gmrf_logpdf(&[1.0 + alpha, -2.0 + alpha], &[1.0, -2.0], &icar).unwrap();
            assert!(!v.proper);
            assert!(v.value.abs() < 1e-14);
        }
        assert!(matches!(
            gmrf_logpdf(&[1.0], &[0.0, 0.0], &p),
            Err(GmrfError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn logpdf_integrates_to_one_on_two_nodes() {
        let p = build_precision(&edge2(), 0.7, 0.8).unwrap();
        let (lo, hi, steps) = (-8.0, 8.0, 800);
        let h = (hi - lo) / steps as f64;
        let mut mass = 0.0;
        for i in 0..steps {
            for j in 0..steps {
                let x = [lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h];
                mass += gmrf_logpdf(&x, &[0.0, 0.0], &p).unwrap().value.exp() * h * h;
            }
        }
        assert!((mass - 1.0).abs() < 1e-4, "mass = {mass}");
    }

    #[test]
    fn conditional_two_node() {
        let s = scaled_correlation(&edge2(), 0.5).unwrap();
        let c = conditional_from_precision(&s.latent_precision, &[1], &[1.0]).unwrap();
        assert_eq!(c.missing_idx, vec![0]);
        assert!((c.mean[0] - 0.5).abs() < 1e-15);
        assert!((c.covariance()[(0, 0)] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn conditional_identity() {
        let p = DMatrix::<f64>::identity(4, 4);
        let c = conditional_from_precision(&p, &[0, 1, 3], &[2.0, -1.0, 5.0]).unwrap();
        assert_eq!(c.missing_idx, vec![2]);
        assert_eq!(c.mean, vec![0.0]);
        assert_eq!(c.precision[(0, 0)], 1.0);
    }

    #[test]
    fn conditional_errors() {
        let p = DMatrix::<f64>::identity(3, 3);
        assert!(conditional_from_precision(&p, &[], &[]).is_err());
        assert!(conditional_from_precision(&p, &[0, 1, 2], &[0.0; 3]).is_err());
        assert!(conditional_from_precision(&p, &[0, 0], &[0.0; 2]).is_err());
        assert!(conditional_from_precision(&p, &[5], &[0.0]).is_err());
        let singular = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            conditional_from_precision(&singular, &[1, 2], &[0.0, 0.0]),
            Err(GmrfError::Linalg(_))
        ));
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = scaled_correlation(&ArealGraph::ring(6).unwrap(), 0.8).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_gmrf(&mut rng, &[0.0; 6], &s.chol_l, 1.0)
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }
}
