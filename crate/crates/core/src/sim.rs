//! Simulation study: replicate panels at several true `ρ`, fit each model
//! variant, and aggregate MSE, average posterior SD, coverage, DIC and WAIC.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundled;
use crate::copula;
use crate::diagnostics::{self, PosteriorSummary};
use crate::graph::ArealGraph;
use crate::inference::{self, ChainConfig, DataLayer, ModelSpec, PlugIn};
use crate::marginals::{GammaSvcParams, TimeStandardizer};
use crate::panel::RegionalPanel;
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid study configuration: {0}")]
    InvalidConfig(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub true_params: GammaSvcParams,
    /// 1-based adjacency pairs of the study graph.
    pub edges: Vec<(usize, usize)>,
    pub t_len: usize,
    pub rho_grid: Vec<f64>,
    pub replicates: usize,
    pub variants: Vec<ModelSpec>,
    pub chain: ChainConfig,
    pub seed: u64,
}

impl StudyConfig {
    /// Bundled 34-region graph and reference parameters, `T = 64`,
    /// `ρ ∈ {0, 0.5, 0.9}`, all six variants, 10 replicates of 20000-iteration chains.
    pub fn desk(seed: u64) -> Self {
        let g = bundled::india_graph();
        Self {
            true_params: bundled::reference_params(),
            edges: g.edges().iter().map(|&(i, j)| (i + 1, j + 1)).collect(),
            t_len: 64,
            rho_grid: vec![0.0, 0.5, 0.9],
            replicates: 10,
            variants: ModelSpec::all().to_vec(),
            chain: ChainConfig::desk(seed),
            seed,
        }
    }

    /// 100 replicates of 200000-iteration chains.
    pub fn paper(seed: u64) -> Self {
        Self { replicates: 100, chain: ChainConfig::paper(seed), ..Self::desk(seed) }
    }

    pub fn graph(&self) -> Result<ArealGraph, SimError> {
        ArealGraph::from_edges(&self.edges, self.true_params.n()).map_err(|e| SimError::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if let Some(r) = self.rho_grid.iter().find(|r| !(**r >= 0.0 && **r < 1.0)) {
            return Err(SimError::InvalidConfig(format!("true ρ {r} outside [0, 1)")));
        }
        if self.rho_grid.is_empty() {
            return Err(SimError::InvalidConfig("empty ρ grid".into()));
        }
        if self.replicates == 0 {
            return Err(SimError::InvalidConfig("at least one replicate is required".into()));
        }
        if self.variants.is_empty() {
            return Err(SimError::InvalidConfig("empty variant list".into()));
        }
        if self.t_len < 2 {
            return Err(SimError::InvalidConfig("at least two years are required".into()));
        }
        self.chain.validate().map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        self.graph()?;
        Ok(())
    }
}

/// Posterior summaries of one fitted replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFit {
    pub a: Vec<PosteriorSummary>,
    pub b: Vec<PosteriorSummary>,
    pub c: Vec<PosteriorSummary>,
    pub rho: Option<PosteriorSummary>,
    pub dic: f64,
    pub waic: f64,
    pub waic_lppd: f64,
}

/// Fits one model variant to one panel.
pub trait Fitter: Sync {
    fn fit(&self, panel: &RegionalPanel, graph: &ArealGraph, spec: ModelSpec, config: &ChainConfig) -> Result<ReplicateFit, String>;
}

/// The MCMC sampler followed by DIC and WAIC.
#[derive(Debug, Clone, Copy, Default)]
pub struct McmcFitter;

impl Fitter for McmcFitter {
    fn fit(&self, panel: &RegionalPanel, graph: &ArealGraph, spec: ModelSpec, config: &ChainConfig) -> Result<ReplicateFit, String> {
        let out = inference::run_chain(panel, graph, spec, config).map_err(|e| e.to_string())?;
        let row = diagnostics::comparison_row(panel, graph, &out, PlugIn::Natural).map_err(|e| e.to_string())?;
        let summarize = |f: &dyn Fn(&inference::Draw, usize) -> f64| -> Vec<PosteriorSummary> {
            (0..out.n).map(|i| PosteriorSummary::from_draws(&out.draws.iter().map(|d| f(d, i)).collect::<Vec<_>>())).collect()
        };
        let rho = (spec.data_layer == DataLayer::Car)
            .then(|| PosteriorSummary::from_draws(&out.draws.iter().map(|d| d.rho.unwrap_or(f64::NAN)).collect::<Vec<_>>()));
        Ok(ReplicateFit {
            a: summarize(&|d, i| d.a[i]),
            b: summarize(&|d, i| d.b[i]),
            c: summarize(&|d, i| d.c[i]),
            rho,
            dic: row.dic.dic,
            waic: row.waic.waic,
            waic_lppd: row.waic_lppd.waic,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub avg_sd: f64,
    pub covp: f64,
}

/// Mean squared error, mean posterior SD and interval hit rate.
pub fn metrics(estimates: &[f64], truths: &[f64], sds: &[f64], ci_hits: &[bool]) -> Result<Metrics, SimError> {
    let m = estimates.len();
    for len in [truths.len(), sds.len(), ci_hits.len()] {
        if len != m {
            return Err(SimError::LengthMismatch(m, len));
        }
    }
    if m == 0 {
        return Err(SimError::LengthMismatch(0, 0));
    }
    let k = m as f64;
    Ok(Metrics {
        mse: estimates.iter().zip(truths).map(|(e, t)| (e - t) * (e - t)).sum::<f64>() / k,
        avg_sd: sds.iter().sum::<f64>() / k,
        covp: ci_hits.iter().filter(|h| **h).count() as f64 / k,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRow {
    pub rho_true: f64,
    pub model: String,
    /// `a`, `b`, `c` or `rho`.
    pub group: String,
    pub mse: f64,
    pub avg_sd: f64,
    /// Omitted for `ρ` when the true value is 0.
    pub covp: Option<f64>,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionRow {
    pub rho_true: f64,
    pub model: String,
    pub dic_mean: f64,
    pub dic_se: Option<f64>,
    pub waic_mean: f64,
    pub waic_se: Option<f64>,
    pub waic_lppd_mean: f64,
    pub replicates: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub rho_true: f64,
    pub replicate: usize,
    pub model: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyTables {
    pub parameters: Vec<ParameterRow>,
    pub criteria: Vec<CriterionRow>,
    pub exclusions: Vec<Exclusion>,
}

fn mean_se(x: &[f64]) -> (f64, Option<f64>) {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    let se = (x.len() > 1).then(|| {
        let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64;
        (v / x.len() as f64).sqrt()
    });
    (m, se)
}

/// Runs every (true ρ, replicate, variant) fit and aggregates.
///
/// Replicate `s` at grid index `r` simulates from substream `(seed, r, s)`;
/// variant `v` runs its chain with seed `derive(seed, r, s, v + 1)`.
pub fn run_study<F: Fitter>(config: &StudyConfig, fitter: &F) -> Result<StudyTables, SimError> {
    config.validate()?;
    let graph = config.graph()?;
    let ts = TimeStandardizer::new(config.t_len).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    let (n_rho, n_rep, n_var) = (config.rho_grid.len(), config.replicates, config.variants.len());

    let panels: Vec<Result<RegionalPanel, String>> = (0..n_rho * n_rep)
        .into_par_iter()
        .map(|k| {
            let (r, s) = (k / n_rep, k % n_rep);
            let mut stream = rng::stream(config.seed, &[r as u64, s as u64]);
            copula::simulate_panel(&mut stream, &graph, &config.true_params, &ts, config.rho_grid[r], &[]).map_err(|e| e.to_string())
        })
        .collect();

    let fits: Vec<Result<ReplicateFit, String>> = (0..n_rho * n_rep * n_var)
        .into_par_iter()
        .map(|k| {
            let (r, s, v) = (k / (n_rep * n_var), (k / n_var) % n_rep, k % n_var);
            let panel = panels[r * n_rep + s].as_ref().map_err(Clone::clone)?;
            let chain = ChainConfig { seed: rng::derive_seed(config.seed, &[r as u64, s as u64, v as u64 + 1]), ..config.chain };
            fitter.fit(panel, &graph, config.variants[v], &chain)
        })
        .collect();

    aggregate(config, &fits)
}

fn aggregate(config: &StudyConfig, fits: &[Result<ReplicateFit, String>]) -> Result<StudyTables, SimError> {
    let (n_rep, n_var) = (config.replicates, config.variants.len());
    let truth = &config.true_params;
    let mut parameters = Vec::new();
    let mut criteria = Vec::new();
    let mut exclusions = Vec::new();
    for (r, &rho_true) in config.rho_grid.iter().enumerate() {
        for (v, spec) in config.variants.iter().enumerate() {
            let model = spec.to_string();
            let mut ok: Vec<&ReplicateFit> = Vec::new();
            for s in 0..n_rep {
                match &fits[(r * n_rep + s) * n_var + v] {
                    Ok(f) => ok.push(f),
                    Err(e) => exclusions.push(Exclusion { rho_true, replicate: s, model: model.clone(), error: e.clone() }),
                }
            }
            let excluded = n_rep - ok.len();
            if ok.is_empty() {
                continue;
            }
            let groups: [(&str, &dyn Fn(&ReplicateFit) -> &Vec<PosteriorSummary>, &Vec<f64>); 3] =
                [("a", &|f| &f.a, &truth.a), ("b", &|f| &f.b, &truth.b), ("c", &|f| &f.c, &truth.c)];
            for (name, get, true_values) in groups {
                let (mut est, mut tru, mut sds, mut hits) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
                for f in &ok {
                    for (summary, t) in get(f).iter().zip(true_values.iter()) {
                        est.push(summary.mean);
                        tru.push(*t);
                        sds.push(summary.sd);
                        hits.push(summary.covers(*t));
                    }
                }
                let m = metrics(&est, &tru, &sds, &hits)?;
                parameters.push(ParameterRow {
                    rho_true,
                    model: model.clone(),
                    group: name.into(),
                    mse: m.mse,
                    avg_sd: m.avg_sd,
                    covp: Some(m.covp),
                    replicates: ok.len(),
                });
            }
            if spec.data_layer == DataLayer::Car {
                let rho: Vec<PosteriorSummary> = ok.iter().filter_map(|f| f.rho).collect();
                let est: Vec<f64> = rho.iter().map(|s| s.mean).collect();
                let sds: Vec<f64> = rho.iter().map(|s| s.sd).collect();
                let hits: Vec<bool> = rho.iter().map(|s| s.covers(rho_true)).collect();
                let m = metrics(&est, &vec![rho_true; est.len()], &sds, &hits)?;
                parameters.push(ParameterRow {
                    rho_true,
                    model: model.clone(),
                    group: "rho".into(),
                    mse: m.mse,
                    avg_sd: m.avg_sd,
                    covp: (rho_true != 0.0).then_some(m.covp),
                    replicates: ok.len(),
                });
            }
            let (dic_mean, dic_se) = mean_se(&ok.iter().map(|f| f.dic).collect::<Vec<_>>());
            let (waic_mean, waic_se) = mean_se(&ok.iter().map(|f| f.waic).collect::<Vec<_>>());
            let (waic_lppd_mean, _) = mean_se(&ok.iter().map(|f| f.waic_lppd).collect::<Vec<_>>());
            criteria.push(CriterionRow {
                rho_true,
                model,
                dic_mean,
                dic_se,
                waic_mean,
                waic_se,
                waic_lppd_mean,
                replicates: ok.len(),
                excluded,
            });
        }
    }
    Ok(StudyTables { parameters, criteria, exclusions })
}

impl StudyTables {
    pub fn parameter(&self, rho_true: f64, model: &str, group: &str) -> Option<&ParameterRow> {
        self.parameters.iter().find(|r| r.rho_true == rho_true && r.model == model && r.group == group)
    }

    pub fn criterion(&self, rho_true: f64, model: &str) -> Option<&CriterionRow> {
        self.criteria.iter().find(|r| r.rho_true == rho_true && r.model == model)
    }

    /// With `paper_scaling`, MSEs of `b`, `c`, `ρ` are multiplied by 1000 and SDs by 100.
    pub fn write_parameters_csv<W: Write>(&self, writer: W, paper_scaling: bool) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["rho_true", "model", "parameter", "mse", "avg_sd", "covp", "replicates"])?;
        for r in &self.parameters {
            let (ms, ss) = match (paper_scaling, r.group.as_str()) {
                (false, _) => (1.0, 1.0),
                (true, "a") => (1.0, 100.0),
                (true, _) => (1000.0, 100.0),
            };
            w.write_record([
                format!("{:?}", r.rho_true),
                r.model.clone(),
                r.group.clone(),
                format!("{:?}", r.mse * ms),
                format!("{:?}", r.avg_sd * ss),
                r.covp.map(|c| format!("{c:?}")).unwrap_or_default(),
                r.replicates.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_criteria_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["rho_true", "model", "dic", "dic_se", "waic", "waic_se", "waic_lppd", "replicates", "excluded"])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        for r in &self.criteria {
            w.write_record([
                format!("{:?}", r.rho_true),
                r.model.clone(),
                format!("{:?}", r.dic_mean),
                opt(r.dic_se),
                format!("{:?}", r.waic_mean),
                opt(r.waic_se),
                format!("{:?}", r.waic_lppd_mean),
                r.replicates.to_string(),
                r.excluded.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
