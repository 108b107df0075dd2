use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dispersion_skew::cli::SkewOutput;
use dispersion_skew::families::make_family;
use dispersion_skew::fitting::FitResult;
use dispersion_skew::montecarlo::sample_response;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn dmskew(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmskew")).args(args).output().unwrap()
}

fn power_model_data(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let family = make_family("reciprocal_gamma").unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut text = String::from("x1,x2,y\n");
    for _ in 0..n {
        let x1: f64 = rng.random();
        let x2: f64 = 1.0 + rng.random::<f64>();
        let eta = 0.5 + x1 + x2 * x2;
        let y = sample_response(&family, eta * eta, 4.0, &mut rng).unwrap();
        text.push_str(&format!("{x1},{x2},{y}\n"));
    }
    let path = dir.join("data.csv");
    std::fs::write(&path, text).unwrap();
    path
}

fn model_args<'a>(data: &'a str, family: &'a str) -> Vec<&'a str> {
    vec![
        "--family", family, "--link", "sqrt", "--predictor", "b0 + b1*x1 + x2^b2", "--data", data, "--response", "y",
        "--params", "b0,b1,b2",
    ]
}

#[test]
fn skew_writes_one_cumulant_per_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let data = power_model_data(dir.path(), 40, 1);
    let out = dir.path().join("skew.json");
    let mut args = vec!["skew"];
    args.extend(model_args(data.to_str().unwrap(), "reciprocal_gamma"));
    args.extend(["--out", out.to_str().unwrap(), "--true-beta", "0.5,1,2", "--true-phi", "4"]);
    let run = dmskew(&args);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));

    let text = std::fs::read_to_string(&out).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(value["kappa3_beta"].as_array().unwrap().len(), 3);
    assert_eq!(value["gamma1_beta"].as_array().unwrap().len(), 3);
    assert!(value["gamma1_phi"].as_f64().unwrap() > 0.0);
    assert_eq!(value["at_truth"]["kappa3_beta"].as_array().unwrap().len(), 3);

    let parsed: SkewOutput = serde_json::from_str(&text).unwrap();
    let again: SkewOutput = serde_json::from_str(&serde_json::to_string(&parsed).unwrap()).unwrap();
    assert_eq!(parsed, again);
}

#[test]
fn fit_output_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let data = power_model_data(dir.path(), 30, 2);
    let out = dir.path().join("fit.json");
    let mut args = vec!["fit"];
    args.extend(model_args(data.to_str().unwrap(), "reciprocal_gamma"));
    args.extend(["--out", out.to_str().unwrap()]);
    let run = dmskew(&args);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let fit: FitResult = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(fit.converged);
    assert_eq!(fit.parameter_names, ["b0", "b1", "b2"]);
    let back: FitResult = serde_json::from_str(&serde_json::to_string(&fit).unwrap()).unwrap();
    assert_eq!(fit, back);
}

#[test]
fn unknown_family_lists_valid_ids() {
    let dir = tempfile::tempdir().unwrap();
    let data = power_model_data(dir.path(), 10, 3);
    let mut args = vec!["fit"];
    args.extend(model_args(data.to_str().unwrap(), "weibul"));
    let run = dmskew(&args);
    assert_eq!(run.status.code(), Some(1));
    let err = String::from_utf8_lossy(&run.stderr);
    for id in ["gamma", "reciprocal_gamma", "von_mises", "const_cv_weibull"] {
        assert!(err.contains(id), "{err}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = power_model_data(dir.path(), 25, 4);
    let data = data.to_str().unwrap();

    let mut bad_syntax = vec!["fit"];
    bad_syntax.extend(model_args(data, "reciprocal_gamma"));
    let i = bad_syntax.iter().position(|a| *a == "b0 + b1*x1 + x2^b2").unwrap();
    bad_syntax[i] = "b0 + (b1*x1";
    assert_eq!(dmskew(&bad_syntax).status.code(), Some(1));

    assert_eq!(dmskew(&["fit", "--family", "gamma"]).status.code(), Some(1));

    let mut stalled = vec!["fit"];
    stalled.extend(model_args(data, "reciprocal_gamma"));
    stalled.extend(["--max-iter", "1", "--start", "3,-2,0.5"]);
    assert_eq!(dmskew(&stalled).status.code(), Some(3));

    let negative = dir.path().join("neg.csv");
    std::fs::write(&negative, "x1,x2,y\n0.1,1.2,2.0\n0.5,1.5,-1.0\n0.9,1.9,3.0\n0.3,1.1,1.0\n").unwrap();
    let mut domain = vec!["fit"];
    domain.extend(model_args(negative.to_str().unwrap(), "gamma"));
    assert_eq!(dmskew(&domain).status.code(), Some(2));
}

#[test]
fn edgeworth_table() {
    let run = dmskew(&["edgeworth", "--gamma1", "0.5", "--points", "11"]);
    assert!(run.status.success());
    let text = String::from_utf8(run.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x,edgeworth,normal");
    assert_eq!(lines.len(), 12);
    let mid: Vec<f64> = lines[6].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(mid[0], 0.0);
    assert!((mid[1] - mid[2] * (1.0 - 15.0 * 0.25 / 72.0)).abs() < 1e-12);
}

#[test]
fn families_lists_capabilities() {
    let run = dmskew(&["families"]);
    assert!(run.status.success());
    let text = String::from_utf8(run.stdout).unwrap();
    assert!(text.contains("ghs"));
    assert!(text.contains("tangent"));
}
