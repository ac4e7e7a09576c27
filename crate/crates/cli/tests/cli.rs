use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use vbma::data::{crime, crime_prepared, Rows};
use vbma::evidence::{evidence_to_posterior, zellner_log_evidence};
use vbma::models::{subset_from_mask, ZellnerModel};

const BIN: &str = env!("CARGO_BIN_EXE_vbma");

const TINY_GP: &str = r#"
[data]
source = "synth"

[synth]
side = 5
test_columns = 1

[model]
family = "gp"
offsets = [0.0]

[vbma]
seed = 3
pretrain_iters = 20
joint_iters = 10
window = 5
"#;

fn vbma(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--out")
        .arg(dir.join("out"))
        .env_remove("VBMA_SEED")
        .env_remove("VBMA_CONFIG")
        .env_remove("VBMA_OUT")
        .env_remove("VBMA_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join("out").join(name)).unwrap()
}

fn table(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(str::to_owned).collect();
    (header, lines.map(|l| l.split(',').map(str::to_owned).collect()).collect())
}

fn weight_of(weights: &str, model: &str) -> f64 {
    let (_, rows) = table(weights);
    rows.iter().find(|r| r[0] == model).unwrap()[1].parse().unwrap()
}

fn crime_exact() -> Vec<f64> {
    let d = crime_prepared(&crime()).unwrap();
    let train = d.regression_data(Rows::Train).unwrap();
    let ests: Vec<_> = (0..8)
        .map(|mask| zellner_log_evidence(&ZellnerModel::new(&train, &subset_from_mask(mask, 3)).unwrap()).unwrap())
        .collect();
    evidence_to_posterior(&ests, &[0.125; 8]).unwrap()
}

#[test]
fn crime_fit_is_close_to_exact_and_byte_reproducible() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let stdout = ok(&vbma(a.path(), &["fit", "--seed", "1"]));
    assert!(stdout.starts_with("vbma "));
    ok(&vbma(b.path(), &["fit", "--seed", "1", "--threads", "2"]));
    for f in ["weights.csv", "elbo_trace.csv", "checkpoint.txt"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f} differs between reruns");
    }
    let weights = read(a.path(), "weights.csv");
    assert!(weights.starts_with("# vbma 0.1.0 seed=1 config="));
    let exact = crime_exact();
    // bit 1 = Prob
    assert!((weight_of(&weights, "Prob") - exact[2]).abs() < 0.07);
    let (_, rows) = table(&weights);
    let total: f64 = rows.iter().map(|r| r[1].parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn different_seeds_give_different_traces() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    ok(&vbma(a.path(), &["fit", "--seed", "1", "--joint-iters", "50", "--window", "20"]));
    ok(&vbma(b.path(), &["fit", "--seed", "2", "--joint-iters", "50", "--window", "20"]));
    assert_ne!(read(a.path(), "elbo_trace.csv"), read(b.path(), "elbo_trace.csv"));
}

#[test]
fn environment_overrides_apply() {
    let d = TempDir::new().unwrap();
    let out = Command::new(BIN)
        .args(["fit", "--out"])
        .arg(d.path().join("out"))
        .env("VBMA_SEED", "9")
        .env("VBMA_JOINT_ITERS", "30")
        .env("VBMA_WINDOW", "10")
        .output()
        .unwrap();
    ok(&out);
    let trace = read(d.path(), "elbo_trace.csv");
    assert!(trace.starts_with("# vbma 0.1.0 seed=9 "));
    let (header, rows) = table(&trace);
    assert_eq!(header, ["iteration", "phase", "model", "elbo", "q"]);
    // 500 pretraining iterations plus at most 30 joint ones, 8 models and the ensemble each
    assert!(rows.len() <= 530 * 9);
    let last = rows.last().unwrap();
    assert_eq!((last[1].as_str(), last[2].as_str()), ("joint", "ensemble"));
}

#[test]
fn evidence_and_bayes_factor_agree_with_closed_form() {
    let d = TempDir::new().unwrap();
    ok(&vbma(d.path(), &["evidence"]));
    let (header, rows) = table(&read(d.path(), "evidence.csv"));
    assert_eq!(header, ["model", "method", "log_evidence", "se", "posterior_prob"]);
    let exact = crime_exact();
    for (m, r) in rows.iter().enumerate() {
        assert_eq!(r[1], "closed-form-zellner");
        assert!((r[4].parse::<f64>().unwrap() - exact[m]).abs() < 1e-12);
    }

    ok(&vbma(d.path(), &["fit"]));
    let stdout = ok(&vbma(d.path(), &["bf", "Prob+Ed", "M+Prob+Ed"]));
    assert!(stdout.contains("BF(Prob+Ed : M+Prob+Ed)"));
    let (_, rows) = table(&read(d.path(), "bf.csv"));
    let vb: f64 = rows[0][2].parse().unwrap();
    let oracle: f64 = rows[0][3].parse().unwrap();
    assert!((oracle - exact[6] / exact[7]).abs() < 1e-9);
    assert!(vb > 2.0 && vb < 4.0, "{vb}");

    ok(&vbma(d.path(), &["bf", "Prob", "Prob"]));
    let (_, rows) = table(&read(d.path(), "bf.csv"));
    assert_eq!(rows[0][2], "1.0");
}

#[test]
fn single_candidate_gets_all_weight() {
    let d = TempDir::new().unwrap();
    let cfg = write_config(d.path(), "gp.toml", TINY_GP);
    ok(&vbma(d.path(), &["fit", "--config", cfg.to_str().unwrap()]));
    assert_eq!(weight_of(&read(d.path(), "weights.csv"), "gp"), 1.0);
    let stdout = ok(&vbma(d.path(), &["coverage", "--config", cfg.to_str().unwrap()]));
    assert!(stdout.contains("true-hyperparameters"));
    let (_, rows) = table(&read(d.path(), "coverage.csv"));
    assert_eq!(rows.len(), 9);
    assert!(rows.iter().all(|r| r[2] != "NA"));
}

#[test]
fn predict_without_levels_writes_means_only() {
    let d = TempDir::new().unwrap();
    let cfg = write_config(d.path(), "c.toml", "[predict]\nlevels = []\ndraws = 200\ncoefficient_draws = 500\n");
    let c = cfg.to_str().unwrap();
    ok(&vbma(d.path(), &["fit", "--config", c, "--joint-iters", "40", "--window", "20"]));
    ok(&vbma(d.path(), &["predict", "--config", c, "--joint-iters", "40", "--window", "20", "--svg"]));
    let (header, rows) = table(&read(d.path(), "predict.csv"));
    assert_eq!(header, ["row", "M", "Prob", "Ed", "observed", "mean"]);
    assert_eq!(rows.len(), 47);
    let (_, coefs) = table(&read(d.path(), "coefficients.csv"));
    assert_eq!(coefs.len(), 3);
    assert!(d.path().join("out/coefficient_Prob.svg").exists());
}

#[test]
fn coverage_on_a_split_has_an_exact_oracle() {
    let d = TempDir::new().unwrap();
    let cfg = write_config(d.path(), "c.toml", "[data]\nsplit = 0.5\nsplit_seed = 3\n[predict]\ndraws = 400\n");
    let c = cfg.to_str().unwrap();
    ok(&vbma(d.path(), &["fit", "--config", c]));
    ok(&vbma(d.path(), &["coverage", "--config", c, "--svg"]));
    let (header, rows) = table(&read(d.path(), "coverage.csv"));
    assert_eq!(header, ["level", "coverage_vbma", "coverage_oracle"]);
    assert_eq!(rows.len(), 9);
    for r in &rows {
        let v: f64 = r[1].parse().unwrap();
        let o: f64 = r[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&v) && (0.0..=1.0).contains(&o));
    }
    let svg = read(d.path(), "coverage.svg");
    assert!(svg.contains("<!-- vbma 0.1.0 seed="));
}

#[test]
fn synth_is_reproducible() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    ok(&vbma(a.path(), &["synth", "--seed", "4"]));
    ok(&vbma(b.path(), &["synth", "--seed", "4"]));
    let text = read(a.path(), "synth.csv");
    assert_eq!(text, read(b.path(), "synth.csv"));
    let (header, rows) = table(&text);
    assert_eq!(header, ["x1", "x2", "y", "split"]);
    assert_eq!(rows.len(), 400);
    assert_eq!(rows.iter().filter(|r| r[3] == "test").count(), 100);
}

#[test]
fn usage_and_config_errors_exit_with_one() {
    let d = TempDir::new().unwrap();
    assert_eq!(vbma(d.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(vbma(d.path(), &["fit", "--samples", "many"]).status.code(), Some(1));
    assert_eq!(vbma(d.path(), &["--help"]).status.code(), Some(0));

    let bad = write_config(d.path(), "bad.toml", "[vbma]\nsamplez = 3\n");
    let out = vbma(d.path(), &["fit", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("samplez"));

    let out = vbma(d.path(), &["bf", "Prob", "Ed"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("vbma fit"));

    let out = vbma(d.path(), &["fit", "--window", "500"]);
    assert_eq!(out.status.code(), Some(1));

    let out = vbma(d.path(), &["coverage"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn stale_artifacts_are_refused() {
    let d = TempDir::new().unwrap();
    ok(&vbma(d.path(), &["fit", "--seed", "1", "--joint-iters", "30", "--window", "10"]));
    let out = vbma(d.path(), &["bf", "Prob", "Ed", "--seed", "2", "--joint-iters", "30", "--window", "10"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different configuration"));
}

#[test]
fn numerical_failure_exits_with_two_and_keeps_state() {
    let d = TempDir::new().unwrap();
    let cfg = write_config(d.path(), "gp.toml", &TINY_GP.replace("window = 5", "window = 5\nstep_size = 1000.0"));
    let out = vbma(d.path(), &["fit", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(read(d.path(), "checkpoint.txt").contains("vbma-checkpoint"));
}
