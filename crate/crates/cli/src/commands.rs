//! The four workflows. Each writes its artifacts into the context's output directory.

use carcopula::copula;
use carcopula::diagnostics::{self, ComparisonReport, PosteriorSummary, PpcConfig, PpcReport, PpcStatistics};
use carcopula::graph::{summarize_moran, MoranResult};
use carcopula::inference::{ChainOutput, DrawTable, InferenceError, PriorLayer};
use carcopula::marginals::{self, fit_region_gamma, fit_region_lognormal};
use carcopula::sim::{self, McmcFitter, StudyConfig};
use carcopula::{moran_i, rng, run_chain, ArealGraph, GammaSvcParams, ModelSpec, RegionalPanel, TimeStandardizer};
use serde_json::json;

use crate::config::parse_model;
use crate::{csv_bytes, fmt, fmt_opt, CliError, Context};

fn inference_error(e: InferenceError) -> CliError {
    match e {
        InferenceError::InvalidConfig(_) | InferenceError::UnknownModel(_) | InferenceError::DimensionMismatch { .. } => {
            CliError::Config(e.to_string())
        }
        _ => CliError::Numerical(e.to_string()),
    }
}

fn numerical<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Numerical(e.to_string())
}

fn time_standardizer(panel: &RegionalPanel) -> Result<TimeStandardizer, CliError> {
    TimeStandardizer::new(panel.t_len()).map_err(|e| CliError::Config(e.to_string()))
}

/// Per-region gamma MLEs of a panel.
pub fn gamma_mles(panel: &RegionalPanel) -> Result<(GammaSvcParams, Vec<marginals::GammaRegionFit>), CliError> {
    let ts = time_standardizer(panel)?;
    let fits = (0..panel.n())
        .map(|i| {
            fit_region_gamma(panel.series(i), &ts)
                .map_err(|e| CliError::Numerical(format!("gamma fit for region `{}`: {e}", panel.labels()[i])))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let params = GammaSvcParams::new(fits.iter().map(|f| f.a).collect(), fits.iter().map(|f| f.b).collect(), fits.iter().map(|f| f.c).collect())
        .map_err(numerical)?;
    Ok((params, fits))
}

pub fn explore(ctx: &Context) -> Result<(), CliError> {
    let panel = ctx.config.load_panel()?;
    let graph = ctx.config.load_graph(panel.n())?;
    let ts = time_standardizer(&panel)?;
    let (params, gamma) = gamma_mles(&panel)?;
    let lognormal = (0..panel.n())
        .map(|i| {
            fit_region_lognormal(panel.series(i), &ts)
                .map_err(|e| CliError::Numerical(format!("lognormal fit for region `{}`: {e}", panel.labels()[i])))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let labels = panel.labels();

    ctx.write(
        "gamma_mle.csv",
        &csv_bytes(|w| {
            w.write_record(["region", "label", "a", "b", "c", "se_a", "se_b", "se_c", "se_log_a", "se_log_b", "loglik", "observations"])?;
            for (i, f) in gamma.iter().enumerate() {
                w.write_record([
                    (i + 1).to_string(),
                    labels[i].clone(),
                    fmt(f.a),
                    fmt(f.b),
                    fmt(f.c),
                    fmt(f.se[0]),
                    fmt(f.se[1]),
                    fmt(f.se[2]),
                    fmt(f.se_log[0]),
                    fmt(f.se_log[1]),
                    fmt(f.loglik),
                    f.observations.to_string(),
                ])?;
            }
            Ok(())
        })?,
    )?;
    ctx.write(
        "lognormal_mle.csv",
        &csv_bytes(|w| {
            w.write_record(["region", "label", "alpha_star", "beta_star", "sigma2"])?;
            for (i, f) in lognormal.iter().enumerate() {
                w.write_record([(i + 1).to_string(), labels[i].clone(), fmt(f.alpha_star), fmt(f.beta_star), fmt(f.sigma2)])?;
            }
            Ok(())
        })?,
    )?;

    let pit = marginals::pit_transform(&panel, &params, &ts);
    let mut u_gamma = pit.observed();
    let mut u_lognormal: Vec<f64> = (0..panel.n())
        .flat_map(|i| (0..panel.t_len()).map(move |t| (i, t)))
        .filter_map(|(i, t)| panel.get(i, t).map(|y| lognormal[i].cdf(y, t)))
        .collect();
    let qq_gamma = diagnostics::qq_discrepancy(&u_gamma).map_err(numerical)?;
    let qq_lognormal = diagnostics::qq_discrepancy(&u_lognormal).map_err(numerical)?;
    u_gamma.sort_by(f64::total_cmp);
    u_lognormal.sort_by(f64::total_cmp);
    let m = u_gamma.len() as f64;
    ctx.write(
        "qq_pairs.csv",
        &csv_bytes(|w| {
            w.write_record(["expected", "gamma", "lognormal"])?;
            for (k, (g, l)) in u_gamma.iter().zip(&u_lognormal).enumerate() {
                w.write_record([fmt((k + 1) as f64 / (m + 1.0)), fmt(*g), fmt(*l)])?;
            }
            Ok(())
        })?,
    )?;

    let (z, _) = copula::latent_by_year(&panel, &params, &ts);
    let mut per_year: Vec<(i32, MoranResult)> = Vec::new();
    let mut skipped = Vec::new();
    for (t, year) in z.iter().enumerate() {
        match year.iter().copied().collect::<Option<Vec<f64>>>() {
            Some(values) => per_year.push((panel.years()[t], moran_i(&values, &graph).map_err(numerical)?)),
            None => skipped.push(panel.years()[t]),
        }
    }
    ctx.write(
        "moran.csv",
        &csv_bytes(|w| {
            w.write_record(["year", "statistic", "expected", "variance", "z_score", "p_value"])?;
            for (year, r) in &per_year {
                w.write_record([year.to_string(), fmt(r.statistic), fmt(r.expected), fmt(r.variance), fmt(r.z_score), fmt(r.p_value)])?;
            }
            Ok(())
        })?,
    )?;
    let moran = summarize_moran(&per_year.iter().map(|p| p.1.clone()).collect::<Vec<_>>());
    println!(
        "regions {}, years {}, QQ RMSE gamma {:.5} vs lognormal {:.5}, average Moran's I {}",
        panel.n(),
        panel.t_len(),
        qq_gamma.rmse,
        qq_lognormal.rmse,
        moran.as_ref().map(|m| format!("{:.4}", m.mean_statistic)).unwrap_or_else(|| "n/a".into())
    );
    ctx.write_json(
        "explore_summary.json",
        &json!({
            "command": "explore",
            "regions": panel.n(),
            "years": panel.t_len(),
            "missing_cells": panel.missing_cells().len(),
            "pit_clamped": pit.clamped,
            "qq": { "gamma": qq_gamma, "lognormal": qq_lognormal },
            "gamma_better_rmse": qq_gamma.rmse < qq_lognormal.rmse,
            "gamma_better_mae": qq_gamma.mae < qq_lognormal.mae,
            "moran": moran,
            "moran_years_skipped_for_missing": skipped,
        }),
    )
}

/// Posterior summary CSV for every column of a draw table.
pub fn summary_csv(table: &DrawTable) -> Result<Vec<u8>, CliError> {
    csv_bytes(|w| {
        w.write_record(["parameter", "mean", "sd", "q025", "q975", "excludes_zero"])?;
        for (k, name) in table.names.iter().enumerate() {
            let col: Vec<f64> = table.rows.iter().map(|r| r[k]).collect();
            let s = PosteriorSummary::from_draws(&col);
            w.write_record([name.clone(), fmt(s.mean), fmt(s.sd), fmt(s.q025), fmt(s.q975), s.excludes_zero().to_string()])?;
        }
        Ok(())
    })
}

/// Geweke z and ESS per column of a draw table.
pub fn convergence_csv(table: &DrawTable) -> Result<Vec<u8>, CliError> {
    let rows = diagnostics::convergence_table(table);
    csv_bytes(|w| {
        w.write_record(["parameter", "geweke_z", "ess"])?;
        for r in &rows {
            w.write_record([r.parameter.clone(), fmt_opt(r.geweke), fmt_opt(r.ess)])?;
        }
        Ok(())
    })
}

fn imputed_csv(panel: &RegionalPanel, out: &ChainOutput) -> Result<Vec<u8>, CliError> {
    csv_bytes(|w| {
        w.write_record(["region", "label", "year", "mean", "sd", "q025", "q975"])?;
        for cell in &out.imputed {
            let s = PosteriorSummary::from_draws(&cell.draws);
            w.write_record([
                (cell.region + 1).to_string(),
                panel.labels()[cell.region].clone(),
                panel.years()[cell.year_index].to_string(),
                fmt(s.mean),
                fmt(s.sd),
                fmt(s.q025),
                fmt(s.q975),
            ])?;
        }
        Ok(())
    })
}

/// Regions whose trend interval excludes zero, with the sign of the trend.
fn trend_flags(panel: &RegionalPanel, out: &ChainOutput) -> Vec<(usize, String, PosteriorSummary)> {
    (0..out.n)
        .filter_map(|i| {
            let s = PosteriorSummary::from_draws(&out.draws.iter().map(|d| d.c[i]).collect::<Vec<_>>());
            s.excludes_zero().then(|| (i + 1, panel.labels()[i].clone(), s))
        })
        .collect()
}

fn chain_metadata(out: &ChainOutput) -> serde_json::Value {
    let mut notes = Vec::new();
    if out.spec.prior_layer == PriorLayer::Icar {
        notes.push("ICAR prior: 1'(M - W)x = 0, so mu_a, mu_b, mu_c are informed only by their N(0, 100) hyperprior");
    }
    json!({
        "model": out.spec.to_string(),
        "chain": out.config,
        "retained_draws": out.draws.len(),
        "acceptance": out.acceptance,
        "counters": out.counters,
        "final_scales": out.final_scales,
        "notes": notes,
    })
}

pub fn fit(ctx: &Context, model: Option<&str>) -> Result<(), CliError> {
    let spec = parse_model(model.or(ctx.config.model.as_deref()).unwrap_or("CAR-ICAR"))?;
    let chain = ctx.config.chain(ctx.paper_scale, ctx.seed)?;
    let panel = ctx.config.load_panel()?;
    let graph = if spec.uses_graph() { ctx.config.load_graph(panel.n())? } else { placeholder_graph(&ctx.config, panel.n())? };
    let out = run_chain(&panel, &graph, spec, &chain).map_err(inference_error)?;
    let table = out.table();
    let mut draws = Vec::new();
    table.write_csv(&mut draws).map_err(numerical)?;
    ctx.write("draws.csv", &draws)?;
    ctx.write("summary.csv", &summary_csv(&table)?)?;
    ctx.write("convergence.csv", &convergence_csv(&table)?)?;
    ctx.write("imputed.csv", &imputed_csv(&panel, &out)?)?;
    let flags = trend_flags(&panel, &out);
    ctx.write(
        "trend.csv",
        &csv_bytes(|w| {
            w.write_record(["region", "label", "mean", "sd", "q025", "q975", "mean_trend"])?;
            for (region, label, s) in &flags {
                // the rate grows with c, so the mean falls
                let dir = if s.mean > 0.0 { "decreasing" } else { "increasing" };
                w.write_record([region.to_string(), label.clone(), fmt(s.mean), fmt(s.sd), fmt(s.q025), fmt(s.q975), dir.into()])?;
            }
            Ok(())
        })?,
    )?;
    let rho = table.column("rho").map(|c| PosteriorSummary::from_draws(&c));
    if let Some(r) = &rho {
        println!("{spec}: posterior mean of rho {:.4} (95% interval {:.4} to {:.4})", r.mean, r.q025, r.q975);
    }
    println!("{spec}: {} regions with a trend interval excluding zero", flags.len());
    let mut meta = chain_metadata(&out);
    meta["command"] = json!("fit");
    meta["seed"] = json!(ctx.seed);
    meta["seed_generated"] = json!(ctx.seed_generated);
    meta["regions"] = json!(panel.n());
    meta["years"] = json!(panel.years());
    meta["missing_cells"] = json!(panel.missing_cells().len());
    meta["years_with_missing"] = json!(years_with_missing(&panel));
    meta["rho"] = json!(rho);
    meta["trend_regions"] = json!(flags.iter().map(|f| &f.1).collect::<Vec<_>>());
    ctx.write_json("metadata.json", &meta)
}

fn years_with_missing(panel: &RegionalPanel) -> Vec<i32> {
    let mut ys: Vec<i32> = panel.missing_cells().iter().map(|&(_, t)| panel.years()[t]).collect();
    ys.sort_unstable();
    ys.dedup();
    ys
}

/// Indep-Indep never reads the graph, so without an adjacency file any
/// connected graph of the right size serves.
fn placeholder_graph(config: &crate::config::RunConfig, n: usize) -> Result<ArealGraph, CliError> {
    if config.adjacency.is_some() {
        return config.load_graph(n);
    }
    config
        .load_graph(n)
        .or_else(|_| ArealGraph::ring(n))
        .or_else(|_| ArealGraph::from_edges(&[(1, 2)], n))
        .map_err(|e| CliError::Config(e.to_string()))
}

fn ppc_row(model: &str, r: &PpcReport) -> Vec<String> {
    let mut row = vec![model.to_string()];
    row.extend(r.p_values.values().iter().map(|v| fmt_opt(*v)));
    row.push(fmt(r.coverage));
    row.push(r.draws_used.to_string());
    row
}

pub fn compare(ctx: &Context, models: &[String]) -> Result<(), CliError> {
    let names: Vec<String> = if !models.is_empty() {
        models.to_vec()
    } else if let Some(m) = &ctx.config.models {
        m.clone()
    } else {
        ModelSpec::all().iter().map(|s| s.to_string()).collect()
    };
    let specs = names.iter().map(|s| parse_model(s)).collect::<Result<Vec<_>, _>>()?;
    if specs.is_empty() {
        return Err(CliError::Config("empty model list".into()));
    }
    let chain = ctx.config.chain(ctx.paper_scale, ctx.seed)?;
    let panel = ctx.config.load_panel()?;
    let graph = if specs.iter().any(|s| s.uses_graph()) { ctx.config.load_graph(panel.n())? } else { placeholder_graph(&ctx.config, panel.n())? };
    let ppc_cfg = PpcConfig { seed: rng::derive_seed(ctx.seed, &[u64::from_le_bytes(*b"ppc\0\0\0\0\0")]), max_draws: ctx.config.ppc_max_draws };
    let mut report = ComparisonReport::default();
    let mut ppc = Vec::new();
    let mut chains = Vec::new();
    for spec in &specs {
        let out = run_chain(&panel, &graph, *spec, &chain).map_err(inference_error)?;
        let row = diagnostics::comparison_row(&panel, &graph, &out, ctx.config.plug_in).map_err(numerical)?;
        println!("{spec}: DIC {:.2}, WAIC {:.2}", row.dic.dic, row.waic.waic);
        let p = diagnostics::posterior_predictive_check(&panel, &graph, &out, &ppc_cfg).map_err(numerical)?;
        report.rows.push(row);
        ppc.push((spec.to_string(), p));
        chains.push(chain_metadata(&out));
    }
    let mut table = Vec::new();
    report.write_csv(&mut table, ctx.paper_tables).map_err(numerical)?;
    ctx.write("comparison.csv", &table)?;
    ctx.write(
        "ppc.csv",
        &csv_bytes(|w| {
            let mut header = vec!["model".to_string()];
            header.extend(PpcStatistics::NAMES.iter().map(|n| format!("p_{n}")));
            header.push("coverage".into());
            header.push("draws_used".into());
            w.write_record(&header)?;
            for (m, r) in &ppc {
                w.write_record(ppc_row(m, r))?;
            }
            Ok(())
        })?,
    )?;
    ctx.write_json(
        "comparison.json",
        &json!({
            "rows": report.rows,
            "ranking": {
                "dic": report.ranking(|r| r.dic.dic),
                "waic": report.ranking(|r| r.waic.waic),
                "waic_lppd": report.ranking(|r| r.waic_lppd.waic),
            },
            "ppc": ppc.iter().map(|(m, r)| json!({ "model": m, "report": r })).collect::<Vec<_>>(),
        }),
    )?;
    ctx.write_json(
        "metadata.json",
        &json!({
            "command": "compare",
            "seed": ctx.seed,
            "seed_generated": ctx.seed_generated,
            "plug_in": ctx.config.plug_in,
            "ppc_seed": ppc_cfg.seed,
            "regions": panel.n(),
            "years": panel.years(),
            "missing_cells": panel.missing_cells().len(),
            "chains": chains,
        }),
    )
}

pub fn study_config(ctx: &Context) -> Result<StudyConfig, CliError> {
    let mut cfg = if ctx.paper_scale { StudyConfig::paper(ctx.seed) } else { StudyConfig::desk(ctx.seed) };
    let section = &ctx.config.study;
    let panel = match &ctx.config.panel {
        Some(_) => Some(ctx.config.load_panel()?),
        None => None,
    };
    if let Some(p) = ctx.config.load_true_params()? {
        cfg.true_params = p;
    } else if let Some(panel) = &panel {
        cfg.true_params = gamma_mles(panel)?.0;
    }
    let bundled_n = cfg.edges.iter().map(|&(i, j)| i.max(j)).max().unwrap_or(0);
    if ctx.config.adjacency.is_some() || cfg.true_params.n() != bundled_n {
        let g = ctx.config.load_graph(cfg.true_params.n())?;
        cfg.edges = g.edges().iter().map(|&(i, j)| (i + 1, j + 1)).collect();
    }
    if let Some(t) = section.t_len.or(panel.as_ref().map(|p| p.t_len())) {
        cfg.t_len = t;
    }
    if let Some(g) = &section.rho_grid {
        cfg.rho_grid.clone_from(g);
    }
    if let Some(s) = section.replicates {
        cfg.replicates = s;
    }
    if let Some(v) = &section.variants {
        cfg.variants = v.iter().map(|s| parse_model(s)).collect::<Result<_, _>>()?;
    }
    cfg.chain = ctx.config.chain(ctx.paper_scale, ctx.seed)?;
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

pub fn study(ctx: &Context) -> Result<(), CliError> {
    let cfg = study_config(ctx)?;
    let tables = sim::run_study(&cfg, &McmcFitter).map_err(|e| CliError::Config(e.to_string()))?;
    let mut params = Vec::new();
    tables.write_parameters_csv(&mut params, ctx.paper_tables).map_err(numerical)?;
    ctx.write("study_parameters.csv", &params)?;
    let mut crit = Vec::new();
    tables.write_criteria_csv(&mut crit).map_err(numerical)?;
    ctx.write("study_criteria.csv", &crit)?;
    for r in &tables.criteria {
        println!("rho {:.1} {}: DIC {:.2}, WAIC {:.2} ({} replicates)", r.rho_true, r.model, r.dic_mean, r.waic_mean, r.replicates);
    }
    if !tables.exclusions.is_empty() {
        eprintln!("{} replicate fits failed and were excluded", tables.exclusions.len());
    }
    ctx.write_json(
        "study_manifest.json",
        &json!({
            "command": "study",
            "seed": ctx.seed,
            "seed_generated": ctx.seed_generated,
            "seed_derivation": "panel (grid index r, replicate s) uses substream (seed, r, s); variant v uses chain seed (seed, r, s, v + 1)",
            "config": cfg,
            "exclusions": tables.exclusions,
        }),
    )
}
