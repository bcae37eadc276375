//! Acceptance criteria 1 to 9, one PASS/FAIL line each.
//!
//! Criteria 6 and 7 need the 34-subdivision rainfall panel, read from
//! `$CARCOPULA_PANEL` or `data/india_monsoon_rainfall.csv`. Without it they
//! report FAIL (blocked) and do not fail the run.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use carcopula::bundled::india_graph;
use carcopula::diagnostics::{dic, ess_batch_means, geweke_default, waic, WaicFit};
use carcopula::gmrf::{conditional_from_precision, scaled_correlation};
use carcopula::inference::{draw_mu, draw_sigma2, mu_full_conditional, sigma2_full_conditional, ChainConfig, DataLayer, PriorKernel, PriorLayer};
use carcopula::sim::{run_study, Fitter, McmcFitter, ReplicateFit, StudyConfig};
use carcopula::{copula_logdensity, simulate_panel, ArealGraph, GammaSvcParams, ModelSpec, RegionalPanel, TimeStandardizer};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    blocked: bool,
    detail: String,
}

impl Outcome {
    fn check(pass: bool, detail: String) -> Self {
        Self { pass, blocked: false, detail }
    }

    fn blocked(detail: &str) -> Self {
        Self { pass: false, blocked: true, detail: detail.into() }
    }
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> ArealGraph {
    let mut edges: Vec<(usize, usize)> = (2..=n).map(|i| (rng.random_range(1..i), i)).collect();
    for _ in 0..rng.random_range(0..=n) {
        let (i, j) = (rng.random_range(1..=n), rng.random_range(1..=n));
        let e = (i.min(j), i.max(j));
        if i != j && !edges.contains(&e) {
            edges.push(e);
        }
    }
    ArealGraph::from_edges(&edges, n).unwrap()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=34);
        let g = random_graph(&mut rng, n);
        let rho = rng.random_range(0.0..1.0);
        let s = scaled_correlation(&g, rho).unwrap();
        let r = s.correlation_matrix();
        let inv = g.car_kernel(rho).try_inverse().unwrap();
        for i in 0..n {
            worst = worst.max((r[(i, i)] - 1.0).abs()).max((inv[(i, i)] / s.delta[i] - 1.0).abs());
        }
    }
    let edge = ArealGraph::from_edges(&[(1, 2)], 2).unwrap();
    let mut worst_pair: f64 = 0.0;
    for _ in 0..1000 {
        let rho: f64 = rng.random_range(0.0..0.999);
        let z = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
        let got = copula_logdensity(&z, &scaled_correlation(&edge, rho).unwrap()).unwrap();
        // on a single edge the implied correlation is ρ itself
        let r2 = rho * rho;
        let want = -0.5 * (1.0 - r2).ln() - (r2 * (z[0] * z[0] + z[1] * z[1]) - 2.0 * rho * z[0] * z[1]) / (2.0 * (1.0 - r2));
        worst_pair = worst_pair.max((got - want).abs());
    }
    Outcome::check(
        worst < 1e-10 && worst_pair < 1e-10,
        format!("max |R_ii - 1| = {worst:.2e} over 1000 graphs; n=2 closed form max error {worst_pair:.2e}"),
    )
}

fn criterion_2() -> Outcome {
    let g = india_graph();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let p = scaled_correlation(&g, rng.random_range(0.0..0.99)).unwrap().latent_precision;
        let mut idx: Vec<usize> = (0..34).collect();
        idx.shuffle(&mut rng);
        let k = rng.random_range(1..=33);
        let mut missing = idx[..k].to_vec();
        let mut observed = idx[k..].to_vec();
        missing.sort_unstable();
        observed.sort_unstable();
        let x: Vec<f64> = observed.iter().map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let c = conditional_from_precision(&p, &observed, &x).unwrap();

        let sigma = p.clone().try_inverse().unwrap();
        let sub = |r: &[usize], s: &[usize]| DMatrix::from_fn(r.len(), s.len(), |a, b| sigma[(r[a], s[b])]);
        let s_oo_inv = sub(&observed, &observed).try_inverse().unwrap();
        let s_mo = sub(&missing, &observed);
        let mean = &s_mo * &s_oo_inv * DVector::from_column_slice(&x);
        let cov = sub(&missing, &missing) - &s_mo * &s_oo_inv * s_mo.transpose();
        let prec = cov.clone().try_inverse().unwrap();
        let got_cov = c.covariance();
        for a in 0..k {
            worst = worst.max((c.mean[a] - mean[a]).abs());
            for b in 0..k {
                worst = worst.max((got_cov[(a, b)] - cov[(a, b)]).abs());
                worst = worst.max((c.precision[(a, b)] - prec[(a, b)]).abs() / (1.0 + prec[(a, b)].abs()));
            }
        }
    }
    Outcome::check(worst < 1e-8, format!("max discrepancy {worst:.2e} over 200 missing patterns"))
}

/// Mean and variance of a sample, with their Monte Carlo standard errors.
fn moments(x: &[f64]) -> (f64, f64, f64, f64) {
    let m = x.len() as f64;
    let mean = x.iter().sum::<f64>() / m;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / m;
    (mean, var, (var / m).sqrt(), ((m4 - var * var) / m).sqrt())
}

fn criterion_3() -> Outcome {
    let g = india_graph();
    let n = g.n();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let x: Vec<f64> = (0..n).map(|_| 0.4 + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
    let draws = 100_000;
    let mut failures = Vec::new();
    for (label, kernel, dense_k, rho) in [
        ("CAR", PriorKernel::from_graph(&g), g.car_kernel(0.7), 0.7),
        ("Indep", PriorKernel::Identity, DMatrix::identity(n, n), 0.0),
    ] {
        let (sigma2, mu) = (0.8, 0.35);
        let one = DVector::from_element(n, 1.0);
        let xv = DVector::from_column_slice(&x);
        let prec = (one.transpose() * &dense_k * &one)[0] / sigma2 + 0.01;
        let mu_mean = (one.transpose() * &dense_k * &xv)[0] / sigma2 / prec;
        let mu_var = 1.0 / prec;
        let r = &xv - &one * mu;
        let shape = 0.5 * n as f64 + 0.01;
        let rate = 0.5 * (r.transpose() * &dense_k * &r)[0] + 0.01;
        let ig_mean = rate / (shape - 1.0);
        let ig_var = rate * rate / ((shape - 1.0).powi(2) * (shape - 2.0));

        let mus: Vec<f64> = (0..draws).map(|_| draw_mu(&mut rng, &x, &kernel, rho, sigma2)).collect();
        let sig: Vec<f64> = (0..draws).map(|_| draw_sigma2(&mut rng, &x, mu, &kernel, rho)).collect();
        let (m, v, se_m, se_v) = moments(&mus);
        if (m - mu_mean).abs() > 4.0 * se_m || (v - mu_var).abs() > 4.0 * se_v {
            failures.push(format!("{label} mu: mean {m} vs {mu_mean}, var {v} vs {mu_var}"));
        }
        let (m, v, se_m, se_v) = moments(&sig);
        if (m - ig_mean).abs() > 4.0 * se_m || (v - ig_var).abs() > 4.0 * se_v {
            failures.push(format!("{label} sigma2: mean {m} vs {ig_mean}, var {v} vs {ig_var}"));
        }
        let (fm, fv) = mu_full_conditional(&x, &kernel, rho, sigma2);
        let (fs, fr) = sigma2_full_conditional(&x, mu, &kernel, rho);
        if (fm - mu_mean).abs() > 1e-10 || (fv - mu_var).abs() > 1e-10 || (fs - shape).abs() > 1e-12 || (fr - rate).abs() > 1e-10 * rate {
            failures.push(format!("{label}: analytic parameters disagree with the dense oracle"));
        }
    }
    // ICAR: 1ᵀK1 = 0 and 1ᵀKx = 0, so only the N(0, 100) hyperprior remains
    let icar = PriorKernel::from_graph(&g);
    let (m, v) = mu_full_conditional(&x, &icar, 1.0, 0.5);
    if m != 0.0 || v != 1.0 / 0.01 {
        failures.push(format!("ICAR conditional ({m}, {v}) is not (0, 100)"));
    }
    let mus: Vec<f64> = (0..draws).map(|_| draw_mu(&mut rng, &x, &icar, 1.0, 0.5)).collect();
    let (m, v, se_m, se_v) = moments(&mus);
    if m.abs() > 4.0 * se_m || (v - 100.0).abs() > 4.0 * se_v {
        failures.push(format!("ICAR draws: mean {m}, var {v}"));
    }
    let pass = failures.is_empty();
    Outcome::check(pass, if pass { "CAR and Indep kernels within 4 MC SE over 1e5 draws; ICAR conditional exactly N(0, 100)".into() } else { failures.join("; ") })
}

struct Recording {
    fits: Mutex<Vec<ReplicateFit>>,
}

impl Fitter for Recording {
    fn fit(&self, panel: &RegionalPanel, graph: &ArealGraph, spec: ModelSpec, config: &ChainConfig) -> Result<ReplicateFit, String> {
        let fit = McmcFitter.fit(panel, graph, spec, config)?;
        self.fits.lock().unwrap().push(fit.clone());
        Ok(fit)
    }
}

fn criterion_4() -> Outcome {
    let ring = ArealGraph::ring(10).unwrap();
    let config = StudyConfig {
        true_params: GammaSvcParams::new(
            (0..10).map(|i| 8.0 + i as f64).collect(),
            (0..10).map(|i| 0.001 * (1.0 + 0.1 * i as f64)).collect(),
            (0..10).map(|i| 0.02 * (i as f64 - 4.5)).collect(),
        )
        .unwrap(),
        edges: ring.edges().iter().map(|&(i, j)| (i + 1, j + 1)).collect(),
        t_len: 200,
        rho_grid: vec![0.9],
        replicates: 10,
        variants: vec![ModelSpec::new(DataLayer::Car, PriorLayer::Car)],
        chain: ChainConfig::desk(0),
        seed: 404,
    };
    let rec = Recording { fits: Mutex::new(Vec::new()) };
    let tables = match run_study(&config, &rec) {
        Ok(t) => t,
        Err(e) => return Outcome::check(false, e.to_string()),
    };
    let fits = rec.fits.into_inner().unwrap();
    let close = fits.iter().filter(|f| f.rho.is_some_and(|r| (r.mean - 0.9).abs() <= 0.1)).count();
    let (mut hits, mut total) = (0usize, 0usize);
    for f in &fits {
        for (group, truth) in [(&f.a, &config.true_params.a), (&f.b, &config.true_params.b), (&f.c, &config.true_params.c)] {
            for (s, t) in group.iter().zip(truth) {
                hits += s.covers(*t) as usize;
                total += 1;
            }
        }
    }
    let coverage = hits as f64 / total as f64;
    let rho_means: Vec<String> = fits.iter().filter_map(|f| f.rho.map(|r| format!("{:.3}", r.mean))).collect();
    Outcome::check(
        fits.len() == 10 && tables.exclusions.is_empty() && close >= 8 && coverage >= 0.8,
        format!("rho within 0.1 in {close}/10 (means {}); pooled (a,b,c) coverage {coverage:.3}", rho_means.join(" ")),
    )
}

fn criterion_5() -> Outcome {
    let mut config = StudyConfig::desk(505);
    config.rho_grid = vec![0.5, 0.9];
    let tables = match run_study(&config, &McmcFitter) {
        Ok(t) => t,
        Err(e) => return Outcome::check(false, e.to_string()),
    };
    let mut notes = Vec::new();
    let mut pass = tables.exclusions.is_empty();
    if !pass {
        notes.push(format!("{} excluded fits", tables.exclusions.len()));
    }
    let models: Vec<ModelSpec> = ModelSpec::all().to_vec();
    for m in models.iter().filter(|m| m.data_layer == DataLayer::Car) {
        let name = m.to_string();
        let (lo, hi) = (tables.parameter(0.9, &name, "rho"), tables.parameter(0.5, &name, "rho"));
        match (lo, hi) {
            (Some(a), Some(b)) => {
                pass &= a.mse < b.mse;
                notes.push(format!("{name} MSE(rho) {:.2e} at 0.9 vs {:.2e} at 0.5", a.mse, b.mse));
            }
            _ => pass = false,
        }
    }
    for rho in [0.5, 0.9] {
        for (crit, key) in [("DIC", 0), ("WAIC", 1)] {
            let value = |m: &ModelSpec| {
                tables.criterion(rho, &m.to_string()).map(|r| if key == 0 { r.dic_mean } else { r.waic_mean }).unwrap_or(f64::NAN)
            };
            let car_max = models.iter().filter(|m| m.data_layer == DataLayer::Car).map(value).fold(f64::NEG_INFINITY, f64::max);
            let indep_min = models.iter().filter(|m| m.data_layer == DataLayer::Indep).map(value).fold(f64::INFINITY, f64::min);
            pass &= car_max < indep_min;
            notes.push(format!("rho {rho}: max CAR-layer {crit} {car_max:.1} vs min Indep-layer {indep_min:.1}"));
        }
    }
    Outcome::check(pass, notes.join("; "))
}

fn rainfall_panel() -> Option<PathBuf> {
    if let Ok(p) = std::env::var("CARCOPULA_PANEL") {
        return Some(PathBuf::from(p));
    }
    let bundled = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/india_monsoon_rainfall.csv");
    bundled.exists().then_some(bundled)
}

fn cli(args: &[&str]) -> i32 {
    carcopula_cli::main_with_args(std::iter::once("carcopula").chain(args.iter().copied()))
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const BLOCKED: &str = "blocked: rainfall panel not available (set CARCOPULA_PANEL or add data/india_monsoon_rainfall.csv)";

fn criterion_6() -> Outcome {
    let Some(panel) = rainfall_panel() else { return Outcome::blocked(BLOCKED) };
    let dir = tempfile::tempdir().unwrap();
    let p = panel.to_str().unwrap();
    let (ex, cmp, fit) = (dir.path().join("explore"), dir.path().join("compare"), dir.path().join("fit"));
    for (args, out) in [(vec!["explore"], &ex), (vec!["compare"], &cmp), (vec!["fit", "--model", "CAR-ICAR"], &fit)] {
        let mut a = args.clone();
        a.extend(["--panel", p, "--seed", "606", "--out", out.to_str().unwrap()]);
        if cli(&a) != 0 {
            return Outcome::check(false, format!("`{}` failed", args[0]));
        }
    }
    let summary = read_json(&ex.join("explore_summary.json"));
    let moran = summary["moran"]["mean_statistic"].as_f64().unwrap_or(f64::NAN);
    let rmse = summary["gamma_better_rmse"].as_bool().unwrap_or(false);
    let mae = summary["gamma_better_mae"].as_bool().unwrap_or(false);
    let rho = read_json(&fit.join("metadata.json"))["rho"]["mean"].as_f64().unwrap_or(f64::NAN);
    let cmp_json = read_json(&cmp.join("comparison.json"));
    let mut ordered = true;
    for key in ["dic", "waic"] {
        let rank: Vec<String> = serde_json::from_value(cmp_json["ranking"][key].clone()).unwrap();
        ordered &= rank.len() == 6 && rank[..3] == ["CAR-ICAR", "CAR-CAR", "CAR-Indep"];
    }
    Outcome::check(
        (0.90..=0.96).contains(&rho) && (moran - 0.3613).abs() <= 0.03 && rmse && mae && ordered,
        format!("rho mean {rho:.4}; average Moran's I {moran:.4}; gamma better RMSE {rmse}, MAE {mae}; DIC/WAIC ordering {ordered}"),
    )
}

fn criterion_7() -> Outcome {
    let Some(panel) = rainfall_panel() else { return Outcome::blocked(BLOCKED) };
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fit");
    if cli(&["fit", "--model", "CAR-ICAR", "--panel", panel.to_str().unwrap(), "--seed", "707", "--out", out.to_str().unwrap()]) != 0 {
        return Outcome::check(false, "`fit` failed".into());
    }
    let text = fs::read_to_string(out.join("summary.csv")).unwrap();
    let mut flagged = 0;
    let mut notes = Vec::new();
    for name in ["c_1", "c_2", "c_3"] {
        let line = text.lines().find(|l| l.starts_with(&format!("{name},"))).unwrap();
        let f: Vec<&str> = line.split(',').collect();
        let (mean, lo): (f64, f64) = (f[1].parse().unwrap(), f[3].parse().unwrap());
        flagged += (mean > 0.0 && lo > 0.0) as usize;
        notes.push(format!("{name} mean {mean:.4}, lower {lo:.4}"));
    }
    Outcome::check(flagged >= 2, format!("{flagged}/3 northeastern trends flagged ({})", notes.join(", ")))
}

fn criterion_8() -> Outcome {
    let mut notes = Vec::new();
    let d = dic(&[10.0, 12.0, 14.0], 11.0).unwrap();
    let dic_ok = (d.dic - 13.0).abs() < 1e-12 && (d.p_d - 1.0).abs() < 1e-12;
    let pw = vec![vec![-1.0, -2.0], vec![-3.0, -4.0]];
    let w = waic(&pw, WaicFit::MeanLog).unwrap();
    // unit means -2 and -3, unit variances 2 and 2
    let waic_ok = (w.waic - 18.0).abs() < 1e-12 && (w.p_w - 4.0).abs() < 1e-12;
    let lppd = ((-1.0f64).exp() + (-3.0f64).exp()).ln() - 2f64.ln() + ((-2.0f64).exp() + (-4.0f64).exp()).ln() - 2f64.ln();
    let wl = waic(&pw, WaicFit::LogMean).unwrap();
    let lppd_ok = (wl.waic - (-2.0 * lppd + 8.0)).abs() < 1e-12;
    notes.push(format!("DIC {} WAIC {} lppd-WAIC {}", dic_ok, waic_ok, lppd_ok));

    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut ess_ok = true;
    for phi in [0.5, 0.9] {
        let m = 100_000;
        let mut x = Vec::with_capacity(m);
        let mut v: f64 = rng.sample::<f64, _>(StandardNormal) / (1.0f64 - phi * phi).sqrt();
        for _ in 0..m {
            v = phi * v + rng.sample::<f64, _>(StandardNormal);
            x.push(v);
        }
        let target = m as f64 * (1.0 - phi) / (1.0 + phi);
        let ess = ess_batch_means(&x).unwrap();
        ess_ok &= ess > target / 2.0 && ess < target * 2.0;
        notes.push(format!("AR(1) phi {phi}: ESS {ess:.0} vs {target:.0}"));
    }
    let rejections = (0..100)
        .filter(|_| {
            let chain: Vec<f64> = (0..1000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            geweke_default(&chain).unwrap().abs() > 1.96
        })
        .count();
    notes.push(format!("Geweke null rejections {rejections}/100"));
    Outcome::check(dic_ok && waic_ok && lppd_ok && ess_ok && rejections <= 10, notes.join("; "))
}

fn synthetic_workspace(dir: &Path) {
    let g = ArealGraph::ring(8).unwrap();
    let params = GammaSvcParams::new(
        (0..8).map(|i| 8.0 + i as f64).collect(),
        (0..8).map(|i| 0.001 * (1.0 + 0.1 * i as f64)).collect(),
        (0..8).map(|i| 0.02 * (i as f64 - 3.5)).collect(),
    )
    .unwrap();
    let ts = TimeStandardizer::new(20).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let panel = simulate_panel(&mut rng, &g, &params, &ts, 0.8, &[(1, 3), (5, 3), (7, 12)]).unwrap();
    let mut buf = Vec::new();
    panel.write_csv(&mut buf).unwrap();
    fs::write(dir.join("panel.csv"), buf).unwrap();
    let adj: Vec<String> = std::iter::once("i,j".to_string()).chain(g.edges().iter().map(|(i, j)| format!("{},{}", i + 1, j + 1))).collect();
    fs::write(dir.join("adjacency.csv"), adj.join("\n")).unwrap();
    fs::write(
        dir.join("config.json"),
        r#"{ "panel": "panel.csv", "adjacency": "adjacency.csv",
             "chain": { "iterations": 2000, "burn_in": 500, "thin": 5 },
             "study": { "rho_grid": [0.0, 0.5], "replicates": 2, "t_len": 12 } }"#,
    )
    .unwrap();
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synthetic_workspace(d);
    let cfg = d.join("config.json");
    let mut notes = Vec::new();
    let mut pass = true;
    for cmd in ["explore", "fit", "compare", "study"] {
        let mut runs = Vec::new();
        for tag in ["a", "b"] {
            let out = d.join(format!("{cmd}-{tag}"));
            let code = cli(&[cmd, "--config", cfg.to_str().unwrap(), "--seed", "909", "--out", out.to_str().unwrap()]);
            let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out)
                .unwrap()
                .map(|e| e.unwrap().path())
                .filter(|p| p.file_name().unwrap() != "timing.txt")
                .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
                .collect();
            files.sort();
            runs.push((code, files));
        }
        let same = runs[0].0 == 0 && runs[1].0 == 0 && runs[0].1 == runs[1].1 && !runs[0].1.is_empty();
        pass &= same;
        notes.push(format!("{cmd}: {} files {}", runs[0].1.len(), if same { "identical" } else { "DIFFER" }));
    }
    Outcome::check(pass, notes.join("; "))
}

fn main() {
    let criteria: [(u32, &str, Duration, fn() -> Outcome); 9] = [
        (1, "copula correctness", Duration::from_secs(60), criterion_1),
        (2, "imputation oracle", Duration::from_secs(60), criterion_2),
        (3, "conjugate-update exactness", Duration::from_secs(60), criterion_3),
        (4, "parameter recovery", Duration::from_secs(20 * 60), criterion_4),
        (5, "simulation-study orderings", Duration::from_secs(2 * 3600), criterion_5),
        (6, "real-data reproduction", Duration::from_secs(15 * 60), criterion_6),
        (7, "trend inference", Duration::from_secs(15 * 60), criterion_7),
        (8, "diagnostics oracles", Duration::from_secs(5 * 60), criterion_8),
        (9, "determinism", Duration::from_secs(15 * 60), criterion_9),
    ];
    let filter: Vec<u32> = std::env::var("ACCEPTANCE_ONLY")
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failed = Vec::new();
    for (id, name, limit, run) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Outcome::check(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let in_time = elapsed <= limit;
        let pass = outcome.pass && in_time;
        let status = if pass { "PASS" } else { "FAIL" };
        let timing = if in_time { String::new() } else { format!(" (over the {} s limit)", limit.as_secs()) };
        println!("criterion {id} ({name}): {status} [{:.1} s{timing}] {}", elapsed.as_secs_f64(), outcome.detail);
        if !pass && !outcome.blocked {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
