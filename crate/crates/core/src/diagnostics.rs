//! Convergence, fit and comparison metrics over chain output.

use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::copula;
use crate::gmrf;
use crate::graph::ArealGraph;
use crate::inference::{self, ChainOutput, DataLayer, InferenceError, PlugIn};
use crate::marginals::TimeStandardizer;
use crate::panel::RegionalPanel;
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("chain of length {len} is too short: need {need}")]
    TooShort { len: usize, need: usize },
    #[error("chain has zero variance")]
    ZeroVariance,
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("segment fractions must be positive and sum to at most 1, got {0} and {1}")]
    BadFractions(f64, f64),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with denominator `len - 1`.
fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

/// Means of consecutive batches of size `⌊√len⌋`; a trailing partial batch is dropped.
fn batch_means(x: &[f64]) -> (usize, Vec<f64>) {
    let b = ((x.len() as f64).sqrt().floor() as usize).max(1);
    (b, x.chunks_exact(b).map(mean).collect())
}

/// Variance of a segment mean estimated by batch means.
fn batch_mean_se2(x: &[f64]) -> Result<f64, DiagnosticsError> {
    let (_, bm) = batch_means(x);
    if bm.len() < 2 {
        return Err(DiagnosticsError::TooShort { len: x.len(), need: 4 });
    }
    Ok(variance(&bm) / bm.len() as f64)
}

/// Geweke z-score comparing the first `frac_first` and last `frac_last` of a chain.
pub fn geweke(chain: &[f64], frac_first: f64, frac_last: f64) -> Result<f64, DiagnosticsError> {
    if !(frac_first > 0.0 && frac_last > 0.0 && frac_first + frac_last <= 1.0) {
        return Err(DiagnosticsError::BadFractions(frac_first, frac_last));
    }
    let m = chain.len();
    let n1 = (frac_first * m as f64).floor() as usize;
    let n2 = (frac_last * m as f64).floor() as usize;
    if n1 < 4 || n2 < 4 {
        return Err(DiagnosticsError::TooShort { len: m, need: (4.0 / frac_first.min(frac_last)).ceil() as usize });
    }
    let (first, last) = (&chain[..n1], &chain[m - n2..]);
    let se2 = batch_mean_se2(first)? + batch_mean_se2(last)?;
    if !(se2 > 0.0) {
        return Err(DiagnosticsError::ZeroVariance);
    }
    Ok((mean(first) - mean(last)) / se2.sqrt())
}

/// Geweke z-score with segment fractions 0.1 and 0.5.
pub fn geweke_default(chain: &[f64]) -> Result<f64, DiagnosticsError> {
    geweke(chain, 0.1, 0.5)
}

/// Effective sample size `M s² / (b · var(batch means))`, batch size `b = ⌊√M⌋`, capped at `M`.
pub fn ess_batch_means(chain: &[f64]) -> Result<f64, DiagnosticsError> {
    let m = chain.len();
    if m < 100 {
        return Err(DiagnosticsError::TooShort { len: m, need: 100 });
    }
    let s2 = variance(chain);
    let (b, bm) = batch_means(chain);
    let long_run = b as f64 * variance(&bm);
    if !(s2 > 0.0) || !(long_run > 0.0) {
        return Err(DiagnosticsError::ZeroVariance);
    }
    Ok((m as f64 * s2 / long_run).min(m as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dic {
    pub dic: f64,
    pub p_d: f64,
    pub d_bar: f64,
    pub d_hat: f64,
}

/// `p_D = D̄ - D(θ̂)`, `DIC = D̄ + p_D`.
pub fn dic(deviance: &[f64], d_hat: f64) -> Result<Dic, DiagnosticsError> {
    if deviance.is_empty() {
        return Err(DiagnosticsError::Empty);
    }
    let d_bar = mean(deviance);
    let p_d = d_bar - d_hat;
    Ok(Dic { dic: d_bar + p_d, p_d, d_bar, d_hat })
}

/// How the per-unit fit term `m_t` of WAIC is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum WaicFit {
    /// Posterior mean of `log f(Y_t | θ)`.
    #[default]
    MeanLog,
    /// `log` of the posterior mean of `f(Y_t | θ)` (lppd).
    LogMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waic {
    pub waic: f64,
    pub p_w: f64,
    /// `Σ_t m_t`.
    pub fit: f64,
}

/// `p_W = Σ_t v_t`, `WAIC = -2 Σ_t m_t + 2 p_W` over a draws × units matrix.
pub fn waic(pointwise: &[Vec<f64>], fit: WaicFit) -> Result<Waic, DiagnosticsError> {
    let draws = pointwise.len();
    if draws < 2 {
        return Err(DiagnosticsError::TooShort { len: draws, need: 2 });
    }
    let units = pointwise[0].len();
    if let Some(row) = pointwise.iter().find(|r| r.len() != units) {
        return Err(DiagnosticsError::LengthMismatch(units, row.len()));
    }
    let mut total_fit = 0.0;
    let mut p_w = 0.0;
    let mut column = vec![0.0; draws];
    for t in 0..units {
        for (c, row) in column.iter_mut().zip(pointwise) {
            *c = row[t];
        }
        p_w += variance(&column);
        total_fit += match fit {
            WaicFit::MeanLog => mean(&column),
            WaicFit::LogMean => log_mean_exp(&column),
        };
    }
    Ok(Waic { waic: -2.0 * total_fit + 2.0 * p_w, p_w, fit: total_fit })
}

/// `log(mean(exp(x)))` without overflow.
pub fn log_mean_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + (x.iter().map(|v| (v - max).exp()).sum::<f64>() / x.len() as f64).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QqDiscrepancy {
    pub rmse: f64,
    pub mae: f64,
}

/// Distance of sorted PIT values from the plotting positions `i/(n+1)`.
pub fn qq_discrepancy(u: &[f64]) -> Result<QqDiscrepancy, DiagnosticsError> {
    if u.is_empty() {
        return Err(DiagnosticsError::Empty);
    }
    let mut sorted = u.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let (mut sq, mut abs) = (0.0, 0.0);
    for (k, v) in sorted.iter().enumerate() {
        let d = v - (k + 1) as f64 / (n + 1.0);
        sq += d * d;
        abs += d.abs();
    }
    Ok(QqDiscrepancy { rmse: (sq / n).sqrt(), mae: abs / n })
}

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted.iter().enumerate().fold(0.0, |d, (k, &x)| {
        let f = cdf(x);
        d.max((k + 1) as f64 / n - f).max(f - k as f64 / n)
    })
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Posterior mean, SD and equal-tailed 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
}

impl PosteriorSummary {
    pub fn from_draws(x: &[f64]) -> Self {
        let mut sorted = x.to_vec();
        sorted.sort_by(f64::total_cmp);
        let sd = if x.len() > 1 { variance(x).sqrt() } else { 0.0 };
        Self { mean: mean(x), sd, q025: quantile_sorted(&sorted, 0.025), q975: quantile_sorted(&sorted, 0.975) }
    }

    pub fn excludes_zero(&self) -> bool {
        self.q025 > 0.0 || self.q975 < 0.0
    }

    pub fn covers(&self, value: f64) -> bool {
        self.q025 <= value && value <= self.q975
    }
}

/// Discrepancy statistics of a panel over its observed cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpcStatistics {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
    pub site_mean: f64,
    pub site_sd: f64,
    pub site_min: f64,
    pub site_max: f64,
    /// Edge average of the cross-year Pearson correlation of neighbours.
    pub neighbor_correlation: Option<f64>,
}

impl PpcStatistics {
    pub fn values(&self) -> [Option<f64>; 9] {
        [
            Some(self.mean),
            Some(self.sd),
            Some(self.min),
            Some(self.max),
            Some(self.site_mean),
            Some(self.site_sd),
            Some(self.site_min),
            Some(self.site_max),
            self.neighbor_correlation,
        ]
    }

    pub const NAMES: [&'static str; 9] =
        ["mean", "sd", "min", "max", "site_mean", "site_sd", "site_min", "site_max", "neighbor_correlation"];
}

/// Statistics of `values[i * T + t]` restricted to `observed`; neighbour
/// correlation only when `edges` is given.
pub fn panel_statistics(values: &[f64], observed: &[bool], n: usize, t_len: usize, edges: Option<&[(usize, usize)]>) -> PpcStatistics {
    let all: Vec<f64> = values.iter().zip(observed).filter(|(_, &o)| o).map(|(v, _)| *v).collect();
    let mut site = [0.0; 4];
    let mut sites = 0usize;
    for i in 0..n {
        let s: Vec<f64> = (0..t_len).filter(|&t| observed[i * t_len + t]).map(|t| values[i * t_len + t]).collect();
        if s.len() < 2 {
            continue;
        }
        sites += 1;
        site[0] += mean(&s);
        site[1] += variance(&s).sqrt();
        site[2] += s.iter().copied().fold(f64::INFINITY, f64::min);
        site[3] += s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    let k = sites.max(1) as f64;
    let neighbor_correlation = edges.map(|edges| {
        let mut total = 0.0;
        let mut count = 0usize;
        for &(i, j) in edges {
            let pairs: Vec<(f64, f64)> = (0..t_len)
                .filter(|&t| observed[i * t_len + t] && observed[j * t_len + t])
                .map(|t| (values[i * t_len + t], values[j * t_len + t]))
                .collect();
            if let Some(r) = pearson(&pairs) {
                total += r;
                count += 1;
            }
        }
        total / count.max(1) as f64
    });
    PpcStatistics {
        mean: mean(&all),
        sd: variance(&all).sqrt(),
        min: all.iter().copied().fold(f64::INFINITY, f64::min),
        max: all.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        site_mean: site[0] / k,
        site_sd: site[1] / k,
        site_min: site[2] / k,
        site_max: site[3] / k,
        neighbor_correlation,
    }
}

fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.len() < 3 {
        return None;
    }
    let m = pairs.len() as f64;
    let (mx, my) = (pairs.iter().map(|p| p.0).sum::<f64>() / m, pairs.iter().map(|p| p.1).sum::<f64>() / m);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpcConfig {
    pub seed: u64,
    /// Evenly spaced subset of retained draws; `None` uses all.
    pub max_draws: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcReport {
    pub observed: PpcStatistics,
    /// `P(T_rep ≥ T_obs)` per statistic.
    pub p_values: PpcStatistics,
    /// Share of observed cells inside their central 95% predictive interval.
    pub coverage: f64,
    pub draws_used: usize,
    pub warnings: Vec<String>,
}

/// Replicates the panel once per retained draw (same missing mask) and
/// compares discrepancy statistics with the observed panel.
pub fn posterior_predictive_check(
    panel: &RegionalPanel,
    graph: &ArealGraph,
    output: &ChainOutput,
    config: &PpcConfig,
) -> Result<PpcReport, DiagnosticsError> {
    let (n, t_len) = (panel.n(), panel.t_len());
    if output.n != n || output.t_len != t_len {
        return Err(DiagnosticsError::LengthMismatch(output.n * output.t_len, n * t_len));
    }
    if output.draws.is_empty() {
        return Err(DiagnosticsError::Empty);
    }
    let ts = TimeStandardizer::new(t_len).map_err(|e| InferenceError::InvalidConfig(e.to_string()))?;
    let car = output.spec.data_layer == DataLayer::Car;
    let edges: Option<Vec<(usize, usize)>> = car.then(|| graph.edges().to_vec());
    let observed: Vec<bool> = (0..n).flat_map(|i| (0..t_len).map(move |t| (i, t))).map(|(i, t)| panel.get(i, t).is_some()).collect();
    let obs_values: Vec<f64> = (0..n).flat_map(|i| (0..t_len).map(move |t| (i, t))).map(|(i, t)| panel.get(i, t).unwrap_or(0.0)).collect();
    let observed_stats = panel_statistics(&obs_values, &observed, n, t_len, edges.as_deref());

    let total = output.draws.len();
    let used = config.max_draws.map_or(total, |m| m.clamp(1, total));
    let picks: Vec<usize> = (0..used).map(|k| k * total / used).collect();
    let mut warnings = Vec::new();
    if used < 100 {
        warnings.push(format!("only {used} draws used; p-values are coarse"));
    }

    let replicates: Vec<(PpcStatistics, Vec<f64>)> = picks
        .par_iter()
        .map(|&k| {
            let draw = &output.draws[k];
            let mut rng = rng::stream(config.seed, &[k as u64]);
            let params = crate::marginals::GammaSvcParams { a: draw.a.clone(), b: draw.b.clone(), c: draw.c.clone() };
            let values: Vec<f64> = match (car, draw.rho) {
                (true, Some(rho)) => {
                    let scaled = gmrf::scaled_correlation(graph, rho).expect("retained ρ lies in [0, 1)");
                    let rep = copula::simulate_with(&mut rng, &scaled, &params, &ts, &[]);
                    (0..n).flat_map(|i| (0..t_len).map(move |t| (i, t))).map(|(i, t)| rep.get(i, t).unwrap()).collect()
                }
                _ => (0..n)
                    .flat_map(|i| (0..t_len).map(move |t| (i, t)))
                    .map(|(i, t)| {
                        let rate = params.rate(i, ts.t_star[t]);
                        let g: f64 = Gamma::new(params.a[i], 1.0 / rate).expect("positive gamma parameters").sample(&mut rng);
                        g
                    })
                    .collect(),
            };
            let stats = panel_statistics(&values, &observed, n, t_len, edges.as_deref());
            let cells: Vec<f64> = values.iter().zip(&observed).filter(|(_, &o)| o).map(|(v, _)| *v).collect();
            (stats, cells)
        })
        .collect();

    let obs_vals = observed_stats.values();
    let mut counts = [0usize; 9];
    for (stats, _) in &replicates {
        for (k, (r, o)) in stats.values().iter().zip(&obs_vals).enumerate() {
            if let (Some(r), Some(o)) = (r, o) {
                counts[k] += (*r >= *o) as usize;
            }
        }
    }
    let p = |k: usize| counts[k] as f64 / used as f64;
    let p_values = PpcStatistics {
        mean: p(0),
        sd: p(1),
        min: p(2),
        max: p(3),
        site_mean: p(4),
        site_sd: p(5),
        site_min: p(6),
        site_max: p(7),
        neighbor_correlation: observed_stats.neighbor_correlation.map(|_| p(8)),
    };

    let observed_cells: Vec<f64> = obs_values.iter().zip(&observed).filter(|(_, &o)| o).map(|(v, _)| *v).collect();
    let mut inside = 0usize;
    let mut column = vec![0.0; used];
    for (c, y) in observed_cells.iter().enumerate() {
        for (slot, (_, cells)) in column.iter_mut().zip(&replicates) {
            *slot = cells[c];
        }
        column.sort_by(f64::total_cmp);
        let (lo, hi) = (quantile_sorted(&column, 0.025), quantile_sorted(&column, 0.975));
        inside += (lo <= *y && *y <= hi) as usize;
    }
    let coverage = inside as f64 / observed_cells.len().max(1) as f64;
    Ok(PpcReport { observed: observed_stats, p_values, coverage, draws_used: used, warnings })
}

/// One row of the model comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub avg_sd_a: f64,
    pub avg_sd_b: f64,
    pub avg_sd_c: f64,
    pub sd_rho: Option<f64>,
    pub dic: Dic,
    pub waic: Waic,
    pub waic_lppd: Waic,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    /// Model names from best to worst under `key`.
    pub fn ranking<F: Fn(&ComparisonRow) -> f64>(&self, key: F) -> Vec<String> {
        let mut rows: Vec<&ComparisonRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| key(a).total_cmp(&key(b)));
        rows.iter().map(|r| r.model.clone()).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W, scale_sds: bool) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["model", "avg_sd_a", "avg_sd_b", "avg_sd_c", "sd_rho", "dic", "p_d", "waic", "p_w", "waic_lppd"])?;
        let k = if scale_sds { 100.0 } else { 1.0 };
        for r in &self.rows {
            w.write_record([
                r.model.clone(),
                format!("{:?}", r.avg_sd_a * k),
                format!("{:?}", r.avg_sd_b * k),
                format!("{:?}", r.avg_sd_c * k),
                r.sd_rho.map(|v| format!("{:?}", v * k)).unwrap_or_default(),
                format!("{:?}", r.dic.dic),
                format!("{:?}", r.dic.p_d),
                format!("{:?}", r.waic.waic),
                format!("{:?}", r.waic.p_w),
                format!("{:?}", r.waic_lppd.waic),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// DIC, both WAIC variants and average posterior SDs of one fitted chain.
pub fn comparison_row(
    panel: &RegionalPanel,
    graph: &ArealGraph,
    output: &ChainOutput,
    plug_in: PlugIn,
) -> Result<ComparisonRow, DiagnosticsError> {
    let (params, rho) = output.posterior_mean(plug_in);
    let d_hat = inference::plugin_deviance(panel, graph, output.spec.data_layer, &params, rho)?;
    let n = output.n;
    let avg_sd = |f: &dyn Fn(&inference::Draw, usize) -> f64| {
        (0..n).map(|i| variance(&output.draws.iter().map(|d| f(d, i)).collect::<Vec<_>>()).sqrt()).sum::<f64>() / n as f64
    };
    let sd_rho = (output.spec.data_layer == DataLayer::Car)
        .then(|| variance(&output.draws.iter().map(|d| d.rho.unwrap_or(f64::NAN)).collect::<Vec<_>>()).sqrt());
    Ok(ComparisonRow {
        model: output.spec.to_string(),
        avg_sd_a: avg_sd(&|d, i| d.a[i]),
        avg_sd_b: avg_sd(&|d, i| d.b[i]),
        avg_sd_c: avg_sd(&|d, i| d.c[i]),
        sd_rho,
        dic: dic(&output.deviance, d_hat)?,
        waic: waic(&output.pointwise, WaicFit::MeanLog)?,
        waic_lppd: waic(&output.pointwise, WaicFit::LogMean)?,
    })
}

/// Geweke z and batch-means ESS of one named column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub parameter: String,
    pub geweke: Option<f64>,
    pub ess: Option<f64>,
}

pub fn convergence_table(table: &inference::DrawTable) -> Vec<ConvergenceRow> {
    table
        .names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let col: Vec<f64> = table.rows.iter().map(|r| r[k]).collect();
            ConvergenceRow { parameter: name.clone(), geweke: geweke_default(&col).ok(), ess: ess_batch_means(&col).ok() }
        })
        .collect()
}
