use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn ddlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddlab"))
        .args(args)
        .env_remove("DDLAB_WORKERS")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

const SMALL_CER: &str = r#"
[experiment]
kind = "estimate-cer"
objective = "cer"
policy = { kind = "merton", p = 0.5 }
apply_drawdown = true

[market]
pieces = [{ r = 0.0, mu = 0.06, sigma = 0.2 }]

[drawdown]
kind = "linear"
alpha = 0.5

[utility]
kind = "power"
p = 0.5

[sim]
n_paths = 400
dt = 0.01
horizons = [1.0, 2.0, 3.0, 4.0]
seed = 11
"#;

fn run_in(dir: &Path, cfg: &Path, extra: &[&str]) -> Output {
    let out = dir.join("out");
    let mut args = vec!["run", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    ddlab(&args)
}

#[test]
fn lemma_suite_passes_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "lemmas.toml", "[experiment]\nkind = \"lemma-suite\"\nalpha = 0.5\n");
    let out = run_in(dir.path(), &cfg, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let verdict = read_json(&dir.path().join("out/lemmas/verdict.json"));
    assert_eq!(verdict["pass"], Value::Bool(true));
    let summary = read_json(&dir.path().join("out/lemmas/summary.json"));
    assert_eq!(summary["kind"], "lemma-suite");
    assert!(summary["checks"].as_array().unwrap().len() > 5);
}

#[test]
fn tabulate_kw_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "kw.toml",
        r#"
        [experiment]
        kind = "tabulate-kw"
        lo = 1.0
        hi = 10.0
        n = 5
        reference_exponent = 2.0
        [drawdown]
        kind = "linear"
        alpha = 0.5
        "#,
    );
    let out = run_in(dir.path(), &cfg, &["--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let table = fs::read_to_string(dir.path().join("out/kw/kw.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "v,K,dK");
    assert_eq!(lines.len(), 6);
    assert!(!dir.path().join("out/kw/summary.json").exists());
}

#[test]
fn missing_field_is_a_config_error_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &SMALL_CER.replace("seed = 11", ""));
    let out = run_in(dir.path(), &cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sim") && err.contains("seed"), "{err}");
}

#[test]
fn missing_section_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let body = SMALL_CER.replace("[drawdown]\nkind = \"linear\"\nalpha = 0.5\n", "");
    let cfg = write(dir.path(), "nodd.toml", &body);
    let out = run_in(dir.path(), &cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[drawdown]"));
}

#[test]
fn diverging_euler_paths_are_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "euler.toml", SMALL_CER);
    let out = run_in(
        dir.path(),
        &cfg,
        &[
            "--set",
            // one Euler step multiplies wealth by 1 - 20 + 2z
            "experiment.policy={ kind = \"constant\", fraction = [10.0] }",
            "--set",
            "market.pieces=[{ r = 0.0, mu = -2.0, sigma = 0.2 }]",
            "--set",
            "experiment.apply_drawdown=false",
            "--set",
            "sim.scheme=euler",
            "--set",
            "sim.dt=1.0",
            "--set",
            "sim.horizons=[1.0, 2.0]",
        ],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn failed_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "fs.toml",
        r#"
        [experiment]
        kind = "fleming-sheu"
        gamma = -1.0
        expected = { e = 0.75, k = 0.0, d = -1.0, eta = 0.0, value = 0.5 }
        [factor]
        r = 0.02
        mu1 = 0.08
        mu2 = 0.0
        sigma = 0.2
        rho = 0.2
        b = -1.0
        "#,
    );
    let out = run_in(dir.path(), &cfg, &[]);
    assert_eq!(out.status.code(), Some(1));
    let verdict = read_json(&dir.path().join("out/fs/verdict.json"));
    assert_eq!(verdict["failed"], serde_json::json!(["value"]));
}

#[test]
fn seed_flag_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{SMALL_CER}\n[reproducibility]\nworkers = [1, 2]\n");
    let cfg = write(dir.path(), "cer.toml", &body);
    let out = run_in(dir.path(), &cfg, &["--seed", "99", "--workers", "2"]);
    assert!(out.status.success() || out.status.code() == Some(1));
    let summary = read_json(&dir.path().join("out/cer/summary.json"));
    assert_eq!(summary["seed"], 99);
    assert_eq!(summary["config"]["sim"]["seed"], 99);
    let checks = summary["checks"].as_array().unwrap();
    let repro = checks
        .iter()
        .find(|c| c["name"] == "reproducibility_bit_mismatches")
        .unwrap();
    assert_eq!(repro["pass"], Value::Bool(true));
    let csv = fs::read_to_string(dir.path().join("out/cer/estimate_estimate.csv")).unwrap();
    assert!(csv.starts_with("T,ordinate,ci\n"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn compare_identical_and_mismatched() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cer.toml", SMALL_CER);
    assert!(run_in(dir.path(), &cfg, &[]).status.code().unwrap() <= 1);
    let a = dir.path().join("out/cer/summary.json");
    let out = ddlab(&["compare", a.to_str().unwrap(), a.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let diff: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(diff["diffs"], serde_json::json!([]));

    let lem = write(dir.path(), "lem.toml", "[experiment]\nkind = \"lemma-suite\"\nalpha = 0.5\n");
    run_in(dir.path(), &lem, &[]);
    let b = dir.path().join("out/lem/summary.json");
    let out = ddlab(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    // a market change is a config-level difference
    let out2 = run_in(dir.path(), &cfg, &["--set", "market.pieces=[{ r = 0.01, mu = 0.07, sigma = 0.2 }]", "--set", "output.name=\"shifted\""]);
    assert!(out2.status.code().unwrap() <= 1);
    let c = dir.path().join("out/shifted/summary.json");
    let out = ddlab(&["compare", a.to_str().unwrap(), c.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let diff: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(diff["diffs"]
        .as_array()
        .unwrap()
        .iter()
        .any(|d| d["level"] == "config" && d["path"].as_str().unwrap().starts_with("config.market")));
}

#[test]
fn transform_reads_relative_csv() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "path.csv", "t,value,runmax\n0,1,1\n1,2,2\n2,1.5,2\n3,3,3\n");
    let cfg = write(
        dir.path(),
        "tr.toml",
        r#"
        [experiment]
        kind = "transform"
        input = "path.csv"
        [drawdown]
        kind = "linear"
        alpha = 0.5
        "#,
    );
    let out = run_in(dir.path(), &cfg, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let x = fs::read_to_string(dir.path().join("out/tr/transformed.csv")).unwrap();
    // F(v) = sqrt(v) for alpha = 1/2; at t = 2 the running max is 2 and v = 1.5
    let row: Vec<f64> = x.lines().nth(3).unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    let expected = 2f64.sqrt() - 0.5 / (2.0 * 2f64.sqrt());
    assert!((row[1] - expected).abs() < 1e-12, "{}", row[1]);
}

#[test]
fn bundled_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&root).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            let out = ddlab(&["check", p.to_str().unwrap()]);
            assert!(out.status.success(), "{}: {}", p.display(), String::from_utf8_lossy(&out.stderr));
            n += 1;
        }
    }
    assert!(n >= 11);
}
