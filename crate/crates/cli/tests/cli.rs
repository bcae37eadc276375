use std::fs;
use std::path::{Path, PathBuf};

use carcopula::inference::DrawTable;
use carcopula::{simulate_panel, ArealGraph, GammaSvcParams, TimeStandardizer};
use carcopula_cli::commands::{convergence_csv, study_config, summary_csv};
use carcopula_cli::{main_with_args, Cli, Context};
use clap::Parser;
use rand::SeedableRng;
use tempfile::TempDir;

/// Ring of 8 regions, 16 years, two missing cells, short chains.
fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let g = ArealGraph::ring(8).unwrap();
    let params = GammaSvcParams::new(
        (0..8).map(|i| 8.0 + i as f64).collect(),
        (0..8).map(|i| 0.001 * (1.0 + 0.1 * i as f64)).collect(),
        (0..8).map(|i| 0.02 * (i as f64 - 3.5)).collect(),
    )
    .unwrap();
    let ts = TimeStandardizer::new(16).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let panel = simulate_panel(&mut rng, &g, &params, &ts, 0.7, &[(2, 5), (6, 11)]).unwrap();
    let mut buf = Vec::new();
    panel.write_csv(&mut buf).unwrap();
    fs::write(dir.path().join("panel.csv"), buf).unwrap();
    let adj: String = std::iter::once("i,j".to_string()).chain(g.edges().iter().map(|(i, j)| format!("{},{}", i + 1, j + 1))).collect::<Vec<_>>().join("\n");
    fs::write(dir.path().join("adjacency.csv"), adj).unwrap();
    fs::write(
        dir.path().join("config.json"),
        r#"{ "panel": "panel.csv", "adjacency": "adjacency.csv",
             "chain": { "iterations": 400, "burn_in": 100, "thin": 2 },
             "ppc_max_draws": 50,
             "study": { "rho_grid": [0.0, 0.6], "replicates": 2, "variants": ["CAR-ICAR", "Indep-Indep"], "t_len": 12 } }"#,
    )
    .unwrap();
    dir
}

fn run(dir: &Path, args: &[&str]) -> i32 {
    let mut full = vec!["carcopula".to_string()];
    full.extend(args.iter().map(|s| s.to_string()));
    full.push("--config".into());
    full.push(dir.join("config.json").display().to_string());
    main_with_args(full)
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "timing.txt")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn out(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

#[test]
fn commands_are_deterministic_given_the_seed() {
    let ws = workspace();
    let d = ws.path();
    for cmd in [vec!["explore"], vec!["fit"], vec!["compare"], vec!["study"]] {
        for tag in ["x", "y"] {
            let o = out(d, &format!("{}-{tag}", cmd[0]));
            let mut args = cmd.clone();
            args.extend(["--seed", "99", "--out", o.to_str().unwrap()]);
            assert_eq!(run(d, &args), 0, "{cmd:?}");
        }
        let x = artifacts(&out(d, &format!("{}-x", cmd[0])));
        let y = artifacts(&out(d, &format!("{}-y", cmd[0])));
        assert!(!x.is_empty());
        assert_eq!(x, y, "{cmd:?}");
        assert!(out(d, &format!("{}-x", cmd[0])).join("timing.txt").exists());
    }
    let different = out(d, "fit-z");
    assert_eq!(run(d, &["fit", "--seed", "100", "--out", different.to_str().unwrap()]), 0);
    assert_ne!(fs::read(different.join("draws.csv")).unwrap(), fs::read(out(d, "fit-x").join("draws.csv")).unwrap());
}

#[test]
fn fit_artifacts_and_draws_round_trip() {
    let ws = workspace();
    let d = ws.path();
    let o = out(d, "fit");
    assert_eq!(run(d, &["fit", "--seed", "5", "--out", o.to_str().unwrap(), "--model", "car-icar"]), 0);
    for f in ["draws.csv", "summary.csv", "convergence.csv", "imputed.csv", "trend.csv", "metadata.json"] {
        assert!(o.join(f).exists(), "{f}");
    }
    let table = DrawTable::read_csv(fs::File::open(o.join("draws.csv")).unwrap()).unwrap();
    assert_eq!(convergence_csv(&table).unwrap(), fs::read(o.join("convergence.csv")).unwrap());
    assert_eq!(summary_csv(&table).unwrap(), fs::read(o.join("summary.csv")).unwrap());
    assert!(table.names.contains(&"rho".to_string()));
    let imputed = fs::read_to_string(o.join("imputed.csv")).unwrap();
    assert_eq!(imputed.lines().count(), 3);
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(o.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 5);
    assert_eq!(meta["seed_generated"], false);
    assert_eq!(meta["model"], "CAR-ICAR");
    assert_eq!(meta["missing_cells"], 2);
}

#[test]
fn indep_indep_outputs_have_no_rho_columns() {
    let ws = workspace();
    let d = ws.path();
    let o = out(d, "fit");
    assert_eq!(run(d, &["fit", "--seed", "5", "--out", o.to_str().unwrap(), "--model", "Indep-Indep"]), 0);
    for f in ["draws.csv", "summary.csv", "convergence.csv"] {
        let text = fs::read_to_string(o.join(f)).unwrap();
        assert!(!text.contains("rho"), "{f}");
    }
}

#[test]
fn missing_seed_is_generated_and_recorded() {
    let ws = workspace();
    let d = ws.path();
    let o = out(d, "explore");
    assert_eq!(run(d, &["explore", "--out", o.to_str().unwrap()]), 0);
    let o = out(d, "fit");
    assert_eq!(run(d, &["fit", "--out", o.to_str().unwrap()]), 0);
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(o.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["seed_generated"], true);
    let seed = meta["seed"].as_u64().unwrap();
    let replay = out(d, "replay");
    assert_eq!(run(d, &["fit", "--seed", &seed.to_string(), "--out", replay.to_str().unwrap()]), 0);
    assert_eq!(fs::read(o.join("draws.csv")).unwrap(), fs::read(replay.join("draws.csv")).unwrap());
}

#[test]
fn config_errors_exit_with_one() {
    let ws = workspace();
    let d = ws.path();
    let o = out(d, "bad");
    fs::write(d.join("bad_grid.json"), r#"{ "study": { "rho_grid": [0.5, 1.0] } }"#).unwrap();
    fs::write(d.join("no_variants.json"), r#"{ "study": { "variants": [] } }"#).unwrap();
    fs::write(d.join("unknown.json"), r#"{ "iterations": 10 }"#).unwrap();
    for cfg in ["bad_grid.json", "no_variants.json", "unknown.json"] {
        let code = main_with_args(["carcopula", "study", "--seed", "1", "--out", o.to_str().unwrap(), "--config", d.join(cfg).to_str().unwrap()]);
        assert_eq!(code, 1, "{cfg}");
    }
    assert_eq!(main_with_args(["carcopula", "frobnicate"]), 1);
    assert_eq!(run(d, &["fit", "--model", "CAR-XYZ", "--out", o.to_str().unwrap()]), 1);
    assert_eq!(main_with_args(["carcopula", "fit", "--out", o.to_str().unwrap()]), 1);
}

#[test]
fn zero_value_is_rejected_naming_the_cell() {
    let ws = workspace();
    let d = ws.path();
    let text = fs::read_to_string(d.join("panel.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<String> = lines[4].split(',').map(String::from).collect();
    cells[3] = "0".into();
    lines[4] = cells.join(",");
    let year = lines[0].split(',').nth(3).unwrap().to_string();
    let region = cells[0].clone();
    fs::write(d.join("panel.csv"), lines.join("\n")).unwrap();
    let cli = Cli::try_parse_from(["carcopula", "explore", "--seed", "1", "--config", d.join("config.json").to_str().unwrap(), "--out", d.join("o").to_str().unwrap()]).unwrap();
    let err = carcopula_cli::run(&cli).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    let msg = err.to_string();
    assert!(msg.contains(&region) && msg.contains(&year), "{msg}");
}

#[test]
fn paper_scale_switches_study_settings() {
    let ws = workspace();
    let d = ws.path();
    fs::write(d.join("plain.json"), r#"{ "study": { "t_len": 12 } }"#).unwrap();
    let parse = |extra: &[&str]| {
        let mut args: Vec<String> = ["carcopula", "study", "--seed", "3"].iter().map(|s| s.to_string()).collect();
        args.extend(["--config".into(), d.join("plain.json").display().to_string()]);
        args.extend(["--out".into(), d.join("o").display().to_string()]);
        args.extend(extra.iter().map(|s| s.to_string()));
        study_config(&Context::from_cli(&Cli::try_parse_from(args).unwrap()).unwrap()).unwrap()
    };
    let desk = parse(&[]);
    assert_eq!((desk.replicates, desk.chain.iterations, desk.chain.burn_in, desk.chain.thin), (10, 20_000, 4_000, 5));
    assert_eq!(desk.rho_grid, vec![0.0, 0.5, 0.9]);
    assert_eq!(desk.variants.len(), 6);
    let paper = parse(&["--paper-scale"]);
    assert_eq!((paper.replicates, paper.chain.iterations, paper.chain.burn_in, paper.chain.thin), (100, 200_000, 40_000, 20));
}

#[test]
fn paper_tables_only_rescale_presentation() {
    let ws = workspace();
    let d = ws.path();
    let (a, b) = (out(d, "plain"), out(d, "scaled"));
    assert_eq!(run(d, &["compare", "--models", "Indep-Indep", "--seed", "2", "--out", a.to_str().unwrap()]), 0);
    assert_eq!(run(d, &["compare", "--models", "Indep-Indep", "--seed", "2", "--paper-tables", "--out", b.to_str().unwrap()]), 0);
    let read = |p: &Path| -> Vec<Vec<String>> {
        fs::read_to_string(p.join("comparison.csv")).unwrap().lines().map(|l| l.split(',').map(String::from).collect()).collect()
    };
    let (x, y) = (read(&a), read(&b));
    let sd_plain: f64 = x[1][1].parse().unwrap();
    let sd_scaled: f64 = y[1][1].parse().unwrap();
    assert!((sd_scaled - 100.0 * sd_plain).abs() < 1e-9 * sd_scaled.abs());
    assert_eq!(x[1][5], y[1][5]);
    assert_eq!(fs::read(a.join("comparison.json")).unwrap(), fs::read(b.join("comparison.json")).unwrap());
}

#[test]
fn indep_indep_needs_no_adjacency() {
    let ws = workspace();
    let d = ws.path();
    fs::write(d.join("noadj.json"), r#"{ "panel": "panel.csv", "chain": { "iterations": 300, "burn_in": 100, "thin": 1 } }"#).unwrap();
    let o = out(d, "indep");
    let code = main_with_args(["carcopula", "fit", "--model", "Indep-Indep", "--seed", "1", "--out", o.to_str().unwrap(), "--config", d.join("noadj.json").to_str().unwrap()]);
    assert_eq!(code, 0);
    let code = main_with_args(["carcopula", "fit", "--model", "CAR-ICAR", "--seed", "1", "--out", o.to_str().unwrap(), "--config", d.join("noadj.json").to_str().unwrap()]);
    assert_eq!(code, 1);
}
