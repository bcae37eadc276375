//! JSON run configuration. Relative paths resolve against the config file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use carcopula::bundled;
use carcopula::inference::{ChainConfig, PlugIn};
use carcopula::{ArealGraph, GammaSvcParams, ModelSpec, RegionalPanel};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Wide panel CSV: `region,<year>,...`, empty cells missing.
    pub panel: Option<PathBuf>,
    /// Adjacency CSV `i,j` with 1-based indices in panel row order.
    pub adjacency: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Variant for `fit`, e.g. `CAR-ICAR`.
    pub model: Option<String>,
    /// Variants for `compare`.
    pub models: Option<Vec<String>>,
    pub chain: ChainOverrides,
    pub plug_in: PlugIn,
    /// Cap on retained draws used for predictive replicates.
    pub ppc_max_draws: Option<usize>,
    pub study: StudySection,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainOverrides {
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudySection {
    pub rho_grid: Option<Vec<f64>>,
    pub replicates: Option<usize>,
    pub variants: Option<Vec<String>>,
    pub t_len: Option<usize>,
    /// CSV `region,a,b,c`; otherwise MLEs of the panel, otherwise the bundled reference field.
    pub true_params: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("parsing {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.panel, &mut cfg.adjacency, &mut cfg.out, &mut cfg.study.true_params].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn chain(&self, paper_scale: bool, seed: u64) -> Result<ChainConfig, CliError> {
        let base = if paper_scale { ChainConfig::paper(seed) } else { ChainConfig::desk(seed) };
        let c = ChainConfig {
            iterations: self.chain.iterations.unwrap_or(base.iterations),
            burn_in: self.chain.burn_in.unwrap_or(base.burn_in),
            thin: self.chain.thin.unwrap_or(base.thin),
            ..base
        };
        c.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(c)
    }

    pub fn load_panel(&self) -> Result<RegionalPanel, CliError> {
        let path = self.panel.as_ref().ok_or_else(|| CliError::Config("no panel given (`panel` in the config or --panel)".into()))?;
        let file = fs::File::open(path).map_err(|e| CliError::Config(format!("opening {}: {e}", path.display())))?;
        RegionalPanel::from_csv(file).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Adjacency file if given, otherwise the bundled 34-region graph.
    pub fn load_graph(&self, n: usize) -> Result<ArealGraph, CliError> {
        match &self.adjacency {
            Some(path) => {
                let file = fs::File::open(path).map_err(|e| CliError::Config(format!("opening {}: {e}", path.display())))?;
                ArealGraph::from_csv(file, n).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
            }
            None => {
                let g = bundled::india_graph();
                if g.n() != n {
                    return Err(CliError::Config(format!(
                        "no adjacency file given and the bundled graph has {} regions, not {n}",
                        g.n()
                    )));
                }
                Ok(g)
            }
        }
    }

    pub fn load_true_params(&self) -> Result<Option<GammaSvcParams>, CliError> {
        let Some(path) = &self.study.true_params else { return Ok(None) };
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
        bundled::parse_params_csv(&text).map(Some).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

pub fn parse_model(s: &str) -> Result<ModelSpec, CliError> {
    s.parse::<ModelSpec>().map_err(|_| CliError::Config(format!("unknown model `{s}`")))
}
