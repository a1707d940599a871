use std::path::Path;
use std::process::{Command, Output};

fn gsn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsn"))
        .args(args)
        .output()
        .expect("gsn runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const SMALL_CONFIG: &str = r#"
name = "small"
sampler = "rjmcmc"
n_grid = [40, 80]
seeds = [1, 2]
eval_points = 2000

[arch]
input_dim = 3
hidden_layers = 1
width = 3
box_bound = 1.0
clip = 1.0

[teacher]
kind = "builtin"
id = "a"

[chain]
burn_in = 100
gap = 5
n_keep = 5
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.toml");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn gen_writes_header_plus_n_lines() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.csv");
    let o = gsn(&[
        "gen",
        "--teacher",
        "builtin:a",
        "--n",
        "100",
        "--seed",
        "7",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 101);
    assert!(text.starts_with("x1,x2,x3,y\n"));
    let meta = std::fs::read_to_string(dir.path().join("d.csv.meta.json")).unwrap();
    assert!(meta.contains("\"seed\": 7"));
}

#[test]
fn gen_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let o = gsn(&[
            "gen",
            "--teacher",
            "network:6:3",
            "--n",
            "50",
            "--seed",
            "2",
            "-o",
            p.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0);
    }
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn missing_config_is_a_config_error() {
    let o = gsn(&["run", "--config", "missing.file"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unknown_flag_prints_usage_and_exits_2() {
    let o = gsn(&["gen", "--bogus"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn bad_teacher_and_suite_are_config_errors() {
    let o = gsn(&["gen", "--teacher", "builtin:z", "--n", "3", "-o", "/tmp/never.csv"]);
    assert_eq!(code(&o), 2);
    let o = gsn(&["check", "--suite", "nope"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let o = gsn(&[
        "gen",
        "--teacher",
        "builtin:a",
        "--n",
        "3",
        "-o",
        "/nonexistent-dir/x.csv",
    ]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent-dir/x.csv"));
}

#[test]
fn check_kl_reports_small_deviation() {
    let o = gsn(&["check", "--suite", "kl"]);
    assert_eq!(code(&o), 0);
    let stdout = String::from_utf8_lossy(&o.stdout);
    let dev: f64 = stdout
        .split("max_deviation=")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(dev <= 1e-8);
}

#[test]
fn check_all_passes() {
    let o = gsn(&["check", "--cases", "50"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 4);
}

#[test]
fn run_writes_reproducible_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_CONFIG);
    let mut csvs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("out{k}"));
        let o = gsn(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        csvs.push(std::fs::read(out.join("results.csv")).unwrap());
        assert!(out.join("summary.json").exists());
        assert!(out.join("results.csv.meta.json").exists());
    }
    assert_eq!(csvs[0], csvs[1]);
    let text = String::from_utf8(csvs.remove(0)).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "n,seed,sampler,estimator,excess_risk,excess_risk_stderr,empirical_risk,acceptance_rate,median_cardinality,wall_ms"
    );
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 3);
}

#[test]
fn run_flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_CONFIG);
    let out = dir.path().join("o");
    let o = gsn(&[
        "run",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--sampler",
        "mala",
        "--seeds",
        "5",
        "--n-grid",
        "30",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().skip(1).all(|l| l.starts_with("30,5,mala,")));
    let o = gsn(&["run", "--config", &cfg, "--n-grid", "80,40"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn sample_trace_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for sampler in ["mala", "rjmcmc"] {
        let mut traces = Vec::new();
        for k in 0..2 {
            let out = dir.path().join(format!("{sampler}{k}.csv"));
            let o = gsn(&[
                "sample",
                "--sampler",
                sampler,
                "--n",
                "50",
                "--seed",
                "4",
                "--burn-in",
                "50",
                "--gap",
                "2",
                "--n-keep",
                "5",
                "--eval-points",
                "500",
                "-o",
                out.to_str().unwrap(),
            ]);
            assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
            traces.push(std::fs::read(&out).unwrap());
        }
        assert_eq!(traces[0], traces[1]);
        let text = String::from_utf8(traces.remove(0)).unwrap();
        // Header plus one row per step of b + c(N-1) steps and the start.
        assert!(text.lines().count() > 50);
    }
}

#[test]
fn sample_reads_an_exported_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let o = gsn(&[
        "gen",
        "--teacher",
        "builtin:b",
        "--n",
        "60",
        "--seed",
        "1",
        "-o",
        data.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let trace = dir.path().join("t.csv");
    let o = gsn(&[
        "sample",
        "--teacher",
        "builtin:b",
        "--data",
        data.to_str().unwrap(),
        "--burn-in",
        "20",
        "--gap",
        "1",
        "--n-keep",
        "3",
        "--no-pilot",
        "--eval-points",
        "100",
        "-o",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("n=60"));
}
