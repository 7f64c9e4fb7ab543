use std::path::Path;
use std::process::{Command, Output};

use proxy_anchor::estimators::{empirical_mspe, fit_anchor, fit_xpar, LinearPredictor};
use proxy_anchor::experiments::pollution::{ingest_reader, loog_cv_lambda, make_noisy_proxies, Schema, DEFAULT_LAMBDA_GRID};
use proxy_anchor::experiments::{read_results, Filter, OutputFormat};
use proxy_anchor::scm::{population_moments, ScmConfig};
use proxy_anchor::simulate::simulate;
use proxy_anchor::{bundles, moments_from_data, Dataset, Method};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_proxy-anchor"));
    c.env_remove("PROXY_ANCHOR_OUT_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn simulate_writes_the_library_sample() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("d.csv");
    ok(&["simulate", "--scm", "e1", "--n", "1000", "--seed", "7", "--out", p(&file)]);
    let text = std::fs::read_to_string(&file).unwrap();
    assert_eq!(text.lines().count(), 1001);

    let (scm, proxies) = ScmConfig::from_json(bundles::E1).unwrap().build().unwrap();
    let mut expected = Vec::new();
    simulate(&scm, proxies.as_ref(), 1000, 7).unwrap().write_csv_to(&mut expected).unwrap();
    assert_eq!(text.as_bytes(), expected.as_slice());

    let to_stdout = ok(&["simulate", "--scm", "e1", "--n", "1000", "--seed", "7"]);
    assert_eq!(to_stdout, text);
    let other = ok(&["simulate", "--scm", "e1", "--n", "1000", "--seed", "8"]);
    assert_ne!(other, text);
}

#[test]
fn fit_matches_the_population_anchor_fit_at_large_n() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    ok(&["simulate", "--scm", "e1", "--n", "200000", "--seed", "3", "--out", p(&data)]);
    let json = ok(&["fit", "--method", "xpar", "--lambda", "5", "--data", p(&data), "--format", "json"]);
    let cli = LinearPredictor::from_json(&json).unwrap();

    let sample = moments_from_data(&Dataset::read_csv(&data).unwrap(), true).unwrap();
    assert_eq!(cli, fit_xpar(&sample, 5.0).unwrap());

    let (scm, proxies) = ScmConfig::from_json(bundles::E1).unwrap().build().unwrap();
    let pop = fit_anchor(&population_moments(&scm, proxies.as_ref()).unwrap(), 5.0).unwrap();
    let gap = (&cli.gamma - &pop.gamma).amax();
    assert!(gap < 0.05, "gap {gap}");
}

#[test]
fn saved_predictor_round_trips_through_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let pred = dir.path().join("p.json");
    ok(&["simulate", "--scm", "e4", "--n", "500", "--seed", "1", "--out", p(&data)]);
    ok(&["fit", "--method", "ar", "--lambda", "2", "--data", p(&data), "--out", p(&pred)]);
    let json = ok(&["evaluate", "--predictor", p(&pred), "--data", p(&data), "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let expected = empirical_mspe(&LinearPredictor::load(&pred).unwrap(), &Dataset::read_csv(&data).unwrap()).unwrap();
    assert_eq!(v["mspe"].as_f64().unwrap(), expected);

    let pop = ok(&["evaluate", "--predictor", p(&pred), "--scm", "e4", "--intervention", "2,-1"]);
    assert!(pop.starts_with("population mspe"));
}

#[test]
fn worst_case_reports_the_maximizer() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let pred = dir.path().join("p.json");
    ok(&["simulate", "--scm", "e1", "--n", "500", "--out", p(&data)]);
    ok(&["fit", "--method", "par", "--lambda", "1", "--no-intercept", "--data", p(&data), "--out", p(&pred)]);
    let json = ok(&["worst-case", "--predictor", p(&pred), "--scm", "e1", "--svr", "0.5", "--set", "par", "--lambda", "1", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert!(v["value"].as_f64().unwrap() > 0.0);
    assert_eq!(v["nu_star"].as_array().unwrap().len(), 3);
}

#[test]
fn identify_emits_the_family_table() {
    let csv = ok(&["identify"]);
    let rows: Vec<&str> = csv.lines().collect();
    assert!(rows[0].starts_with("rho_w,"));
    assert_eq!(rows.len(), 1 + 95);
    let json = ok(&["identify", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["feasible_rho_w"][0].as_f64().unwrap(), 0.06);
}

#[test]
fn robustness_experiment_keeps_the_orderings() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e1.csv");
    ok(&["experiment", "robustness", "--config", "e1", "--m", "20", "--n", "2000", "--seed", "4", "--out", p(&out)]);
    assert!(dir.path().join("e1_summary.csv").exists());
    let t = read_results(&out, OutputFormat::Csv).unwrap();
    let pop = |est: &str, svr: f64| t.values(&Filter { estimator: Some(est), svr: Some(svr), metric: Some("population_mspe"), ..Default::default() })[0];
    for svr in [0.05, 0.5, 1.0] {
        assert!((pop("xpar", svr) - pop("ar", svr)).abs() <= 1e-8);
    }
    assert!(pop("par", 1.0) < pop("par", 0.05));
    let s = |svr: f64| t.summary_for(&Filter { estimator: Some("par"), svr: Some(svr), metric: Some("test_mspe"), ..Default::default() })[0].median;
    assert!(s(1.0) < s(0.05));
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .env("PROXY_ANCHOR_OUT_DIR", dir.path())
        .args(["experiment", "targeted", "--m", "3", "--n", "500", "--format", "json"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let t = read_results(&dir.path().join("targeted.json"), OutputFormat::Json).unwrap();
    assert_eq!(t.values(&Filter { estimator: Some("tar"), cell: Some("shifted"), metric: Some("test_mspe"), ..Default::default() }).len(), 3);
}

#[test]
fn seed_determines_experiment_output() {
    let a = ok(&["experiment", "misspecified-svr", "--m", "4", "--n", "300", "--seed", "11"]);
    let b = ok(&["experiment", "misspecified-svr", "--m", "4", "--n", "300", "--seed", "11", "--jobs", "2"]);
    let c = ok(&["experiment", "misspecified-svr", "--m", "4", "--n", "300", "--seed", "12"]);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn cv_matches_the_library() {
    let json = ok(&["cv", "--schema", "pollution", "--proxy-svr", "0.9", "--seed", "5", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();

    let schema = Schema::resolve("pollution").unwrap();
    let (d, _) = ingest_reader(bundles::SYNTHETIC_POLLUTION_CSV.as_bytes(), &schema).unwrap();
    let col = d.a.as_ref().unwrap().column(0).into_owned();
    let w = make_noisy_proxies(&col, 0.9, 2, 5).unwrap();
    let n = d.n();
    let d = d
        .with_w(nalgebra::DMatrix::from_column_slice(n, 1, w.columns[0].as_slice()))
        .unwrap()
        .with_z(nalgebra::DMatrix::from_column_slice(n, 1, w.columns[1].as_slice()))
        .unwrap();
    let lib = loog_cv_lambda(&d, &DEFAULT_LAMBDA_GRID, Method::Par).unwrap();
    assert_eq!(v["lambda"].as_f64().unwrap(), lib.lambda);
}

#[test]
fn fit_through_a_schema() {
    let text = ok(&["fit", "--method", "par", "--lambda", "3", "--schema", "pollution", "--proxy-svr", "0.9"]);
    assert!(text.contains("DEWP\t"));
    assert!(text.contains("cbwd="));
}

#[test]
fn exit_codes_follow_the_contract() {
    assert_eq!(run(&["bogus"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--scm", "e1", "--n", "10", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--scm", "e1"]).status.code(), Some(2));
    assert_eq!(run(&["fit", "--method", "par", "--data", "x.csv"]).status.code(), Some(2));
    assert_eq!(run(&["fit", "--method", "nope", "--lambda", "1", "--data", "x.csv"]).status.code(), Some(2));

    let missing = run(&["fit", "--method", "ols", "--data", "/nonexistent/d.csv"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/d.csv"));

    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    ok(&["simulate", "--scm", "e1", "--n", "100", "--out", p(&data)]);
    let bad_lambda = run(&["fit", "--method", "ar", "--lambda", "-2", "--data", p(&data)]);
    assert_eq!(bad_lambda.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad_lambda.stderr).contains("lambda"));
    assert_eq!(run(&["simulate", "--scm", "e1", "--n", "0"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}
