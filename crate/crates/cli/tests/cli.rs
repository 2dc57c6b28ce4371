use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn polyirt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polyirt"))
        .args(args)
        .env_remove("POLYIRT_THREADS")
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn simulate(dir: &Path, n: &str, q: &str, m: &str, seed: &str) {
    let out = polyirt(&["simulate", "--n", n, "--q", q, "--m", m, "--seed", seed, "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
}

fn fit_args<'a>(data: &'a str, out: &'a str) -> Vec<&'a str> {
    vec!["fit", "--data", data, "--model", "sprite", "--seed", "42", "--burn-in", "50", "--samples", "50", "--out", out]
}

#[test]
fn simulate_writes_full_matrix_and_truth() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "100", "100", "5", "7");
    let csv = fs::read_to_string(tmp.path().join("responses.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 10_000);
    assert!(tmp.path().join("truth.json").exists());
    assert!(tmp.path().join("responses.json").exists());
    assert!(tmp.path().join("manifest.json").exists());
}

#[test]
fn fit_is_deterministic_and_writes_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "20", "10", "4", "3");
    let data = tmp.path().join("responses.csv");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = polyirt(&fit_args(data.to_str().unwrap(), dir.to_str().unwrap()));
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let pa = fs::read(a.join("posterior.json")).unwrap();
    assert_eq!(pa, fs::read(b.join("posterior.json")).unwrap());
    assert_eq!(fs::read(a.join("trace.csv")).unwrap(), fs::read(b.join("trace.csv")).unwrap());
    let trace = fs::read_to_string(a.join("trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,log_likelihood,accept_rate_traits,accept_rate_questions\n"));
    assert_eq!(trace.lines().count(), 101);

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "fit");
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["config"]["fit"]["burn_in_iterations"], 50);
    assert_eq!(manifest["config"]["hyper"]["prior_var_shape"], 1.0);
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);

    // rerun from the manifest reproduces the posterior
    let c = tmp.path().join("c");
    let out = polyirt(&[
        "fit", "--data", data.to_str().unwrap(), "--model", "sprite",
        "--config", a.join("manifest.json").to_str().unwrap(), "--out", c.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(pa, fs::read(c.join("posterior.json")).unwrap());
}

#[test]
fn thread_flag_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "20", "10", "3", "5");
    let data = tmp.path().join("responses.csv");
    let one = tmp.path().join("one");
    let two = tmp.path().join("two");
    let mut args = fit_args(data.to_str().unwrap(), one.to_str().unwrap());
    args.splice(0..0, ["--threads", "1"]);
    assert!(polyirt(&args).status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_polyirt"))
        .args(fit_args(data.to_str().unwrap(), two.to_str().unwrap()))
        .env("POLYIRT_THREADS", "3")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read(one.join("posterior.json")).unwrap(), fs::read(two.join("posterior.json")).unwrap());
}

#[test]
fn missing_data_file_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.csv");
    let out = polyirt(&fit_args(missing.to_str().unwrap(), tmp.path().join("o").to_str().unwrap()));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nope.csv"), "{}", stderr(&out));
}

#[test]
fn unknown_model_lists_valid_tags() {
    let tmp = tempfile::tempdir().unwrap();
    let out = polyirt(&["fit", "--data", "x.csv", "--model", "sprit", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    for tag in ["sprite", "ord", "lord", "nrm", "gpcm"] {
        assert!(err.contains(tag), "{err}");
    }
}

#[test]
fn validation_errors_name_the_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("bad.csv");
    fs::write(&data, "respondent,question,category\na,q1,2\na,q2,2\nb,q1,0\nb,q2,1\n").unwrap();
    let out = polyirt(&fit_args(data.to_str().unwrap(), tmp.path().join("o").to_str().unwrap()));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("CategoryOutOfRange"), "{}", stderr(&out));
    assert!(stderr(&out).contains("bad.csv"), "{}", stderr(&out));
}

#[test]
fn benchmark_report_and_bounds() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "20", "10", "4", "9");
    let data = tmp.path().join("responses.csv");
    let d = data.to_str().unwrap();
    let out_dir = tmp.path().join("bench");
    let o = out_dir.to_str().unwrap();
    let base = ["benchmark", "--data", d, "--burn-in", "30", "--samples", "30", "--out", o];

    let mut args = base.to_vec();
    args.extend(["--models", "sprite,gpcm", "--rate", "0.2", "--reps", "5"]);
    let out = polyirt(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(out_dir.join("benchmark.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "model,mean_error,std,repetitions");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("sprite,") && lines[2].starts_with("gpcm,"));
    assert!(fs::read_to_string(out_dir.join("benchmark.txt")).unwrap().contains("SPRITE"));

    let mut args = base.to_vec();
    args.extend(["--rate", "1.0"]);
    assert_eq!(polyirt(&args).status.code(), Some(2));
    let mut args = base.to_vec();
    args.extend(["--reps", "0"]);
    assert_eq!(polyirt(&args).status.code(), Some(2));
}

#[test]
fn predict_scores_holdout() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "20", "10", "4", "2");
    let data = tmp.path().join("responses.csv");
    let o = tmp.path().join("p");
    let out = polyirt(&[
        "predict", "--data", data.to_str().unwrap(), "--model", "gpcm", "--burn-in", "30", "--samples", "30",
        "--out", o.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let pred: serde_json::Value = serde_json::from_str(&fs::read_to_string(o.join("prediction.json")).unwrap()).unwrap();
    assert_eq!(pred["holdout_cells"], 40);
    let e = pred["prediction_error"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&e));
}

#[test]
fn mi_and_icrf_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    // question 2 has identical sprites, all at the anchor's (0, 1)
    let params = serde_json::json!({
        "model": "sprite",
        "latent_traits": [0.0, 1.0],
        "means": [[0.0, 1.5, -2.0], [0.0, 0.0, 0.0]],
        "variances": [[1.0, 0.5, 2.0], [1.0, 1.0, 1.0]],
        "anchors": [0, 0]
    });
    let path = tmp.path().join("params.json");
    fs::write(&path, params.to_string()).unwrap();
    let o = tmp.path().join("mi");
    let out = polyirt(&["mi", "--params", path.to_str().unwrap(), "--out", o.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(o.join("mi.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "question,mi_bits,estimated_error");
    let mi2: f64 = lines[2].split(',').nth(1).unwrap().parse().unwrap();
    assert!(mi2.abs() < 1e-10);
    let mi1: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
    assert!(mi1 > 0.0 && mi1 <= 3f64.log2());

    let o = tmp.path().join("icrf");
    let out = polyirt(&[
        "icrf", "--params", path.to_str().unwrap(), "--zmin", "-4", "--zmax", "4", "--points", "201",
        "--out", o.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(o.join("icrf.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "z,category,density,probability");
    assert_eq!(csv.lines().count(), 1 + 201 * 3);
}

#[test]
fn mi_reads_simulated_truth() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "5", "4", "3", "1");
    let o = tmp.path().join("mi");
    let out = polyirt(&["mi", "--params", tmp.path().join("truth.json").to_str().unwrap(), "--out", o.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read_to_string(o.join("mi.csv")).unwrap().lines().count(), 5);
}
