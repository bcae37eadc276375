//! Command-line workflows: exploratory analysis, single-model fits, model
//! comparison and the simulation study. Every artifact is CSV or JSON and is
//! a pure function of the inputs and the seed.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "carcopula", version, about = "Bayesian CAR-copula models for areal panel data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; generated and recorded in the metadata when absent.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// 200000 iterations (burn-in 40000, thin 20) and 100 study replicates.
    #[arg(long, global = true)]
    pub paper_scale: bool,
    /// Apply the published table scalings to CSV tables.
    #[arg(long, global = true)]
    pub paper_tables: bool,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Panel CSV; overrides the config.
    #[arg(long, global = true)]
    pub panel: Option<PathBuf>,
    /// Adjacency CSV; overrides the config.
    #[arg(long, global = true)]
    pub adjacency: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Per-region marginal fits, QQ discrepancy and Moran's I of latent scores.
    Explore,
    /// Fit one model variant.
    Fit {
        #[arg(long)]
        model: Option<String>,
    },
    /// Fit several variants under a shared seed and compare them.
    Compare {
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
    },
    /// Simulation study over a grid of true ρ.
    Study,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Usage, configuration or input-data problem.
    Config(String),
    /// Failure inside a numerical routine.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Resolved settings shared by every command.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub seed: u64,
    pub seed_generated: bool,
    pub paper_scale: bool,
    pub paper_tables: bool,
    pub out: PathBuf,
}

impl Context {
    pub fn from_cli(cli: &Cli) -> Result<Self, CliError> {
        let mut config = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if cli.panel.is_some() {
            config.panel.clone_from(&cli.panel);
        }
        if cli.adjacency.is_some() {
            config.adjacency.clone_from(&cli.adjacency);
        }
        let (seed, seed_generated) = match cli.seed.or(config.seed) {
            Some(s) => (s, false),
            None => (generated_seed(), true),
        };
        let out = cli.out.clone().or_else(|| config.out.clone()).unwrap_or_else(|| PathBuf::from("carcopula-out"));
        fs::create_dir_all(&out).map_err(|e| CliError::Config(format!("creating {}: {e}", out.display())))?;
        Ok(Self { config, seed, seed_generated, paper_scale: cli.paper_scale, paper_tables: cli.paper_tables, out })
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.out.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Config(format!("writing {}: {e}", path.display())))
    }

    pub fn write_json<T: serde::Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Numerical(e.to_string()))?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }
}

fn generated_seed() -> u64 {
    let nanos = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
    carcopula::rng::derive_seed(nanos as u64, &[std::process::id() as u64])
}

/// Runs a parsed command and returns the output directory.
pub fn run(cli: &Cli) -> Result<PathBuf, CliError> {
    let ctx = Context::from_cli(cli)?;
    let start = Instant::now();
    let name = match &cli.command {
        Command::Explore => {
            commands::explore(&ctx)?;
            "explore"
        }
        Command::Fit { model } => {
            commands::fit(&ctx, model.as_deref())?;
            "fit"
        }
        Command::Compare { models } => {
            commands::compare(&ctx, models)?;
            "compare"
        }
        Command::Study => {
            commands::study(&ctx)?;
            "study"
        }
    };
    let secs = start.elapsed().as_secs_f64();
    eprintln!("{name}: wall time {secs:.2} s");
    ctx.write("timing.txt", format!("{name} {secs:.3}\n").as_bytes())?;
    Ok(ctx.out)
}

/// Parses arguments, runs, reports errors and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(out) => {
            println!("artifacts written to {}", out.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub(crate) fn csv_bytes<F>(f: F) -> Result<Vec<u8>, CliError>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<(), csv::Error>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        f(&mut w).map_err(|e| CliError::Numerical(e.to_string()))?;
        w.flush().map_err(|e| CliError::Numerical(e.to_string()))?;
    }
    Ok(buf)
}

pub(crate) fn fmt(v: f64) -> String {
    format!("{v:?}")
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}
