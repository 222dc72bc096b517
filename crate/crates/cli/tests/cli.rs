use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;
use trgs_cli::experiment::TRACE_HEADER;

const QUARTIC: &str = "\
[problem]
kind = quartic
dim = 3
noise = 0.2
x0 = 1.5, 0.5, 0.5

[algorithm]
tag = manual
delta = 0.05
s1 = 16
iterations = 40

[run]
seeds = 0, 1, 2
lambda_min = true
";

const FAIRNESS: &str = "\
[problem]
kind = logistic
features = 4
classes = 3
base_per_class = 20
ratios = 1, 0.5, 0.25
test_base = 30

[algorithm]
tag = manual
delta = 0.05
s1 = 8
iterations = 15

[dro]
conjugate = smoothed-cvar
alpha = 0.5

[run]
seeds = 0..2
";

const DIVERGES: &str = "\
[problem]
kind = exp
dim = 2
x0 = 700, 0

[algorithm]
tag = manual
delta = 1
s1 = 1
iterations = 5

[run]
seeds = 3
";

fn trgs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trgs")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.conf");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn run(dir: &TempDir, config: &str, out: &str, extra: &[&str]) -> Output {
    let cfg = write_config(dir.path(), config);
    let out = dir.path().join(out);
    let mut args = vec!["run", "--config", &cfg, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    trgs(&args)
}

fn header(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().map(str::to_owned).collect()
}

#[test]
fn three_seeds_give_three_traces_and_an_aggregate() {
    let dir = TempDir::new().unwrap();
    let o = run(&dir, QUARTIC, "out", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    for s in 0..3 {
        let p = out.join(format!("trace_seed{s}.csv"));
        assert_eq!(header(&p), TRACE_HEADER);
        let rows = csv::Reader::from_path(&p).unwrap().records().count();
        assert_eq!(rows, 41);
    }
    assert!(!out.join("trace_seed3.csv").exists());
    let agg = header(&out.join("aggregate.csv"));
    assert_eq!(&agg[..2], ["iter", "seeds"]);
    assert!(agg.contains(&"grad_norm_mean".to_owned()) && agg.contains(&"F_max".to_owned()));
    // timing is off, so wall_ms cells stay empty
    let text = fs::read_to_string(out.join("trace_seed0.csv")).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with(',')));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    assert!(run(&dir, QUARTIC, "a", &["--jobs", "2"]).status.success());
    assert!(run(&dir, QUARTIC, "b", &["--jobs", "1"]).status.success());
    for name in ["trace_seed0.csv", "trace_seed1.csv", "trace_seed2.csv", "aggregate.csv", "summary.csv"] {
        let a = fs::read(dir.path().join("a").join(name)).unwrap();
        let b = fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs");
    }
}

#[test]
fn seed_override_and_smoothing() {
    let dir = TempDir::new().unwrap();
    let o = run(&dir, QUARTIC, "out", &["--seed-override", "9", "--smooth", "20", "--budget-multiplier", "0.5"]);
    assert!(o.status.success());
    let out = dir.path().join("out");
    assert!(out.join("trace_seed9.csv").exists());
    assert!(!out.join("trace_seed0.csv").exists());
    let rows = csv::Reader::from_path(out.join("trace_seed9.csv")).unwrap().records().count();
    assert_eq!(rows, 21);
    assert!(out.join("aggregate_smooth20.csv").exists());
}

#[test]
fn fairness_config_adds_accuracy_columns() {
    let dir = TempDir::new().unwrap();
    let o = run(&dir, FAIRNESS, "out", &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let h = header(&dir.path().join("out/trace_seed1.csv"));
    assert_eq!(&h[..9], TRACE_HEADER);
    assert_eq!(&h[9..], ["acc_class0", "acc_class1", "acc_class2", "acc_worst", "acc_overall"]);
}

#[test]
fn failed_run_keeps_partial_trace_with_marker() {
    let dir = TempDir::new().unwrap();
    let o = run(&dir, DIVERGES, "out", &[]);
    assert_eq!(o.status.code(), Some(1));
    let out = dir.path().join("out");
    assert!(out.join("trace_seed3.csv").exists());
    let marker = fs::read_to_string(out.join("trace_seed3.csv.failed")).unwrap();
    assert!(marker.contains("non-finite"));
}

#[test]
fn config_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let o = run(&dir, &QUARTIC.replace("s1 = 16", "learnig_rate = 16"), "out", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 10"));
    let o = trgs(&["run", "--config", "/nonexistent/x.conf", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    // clap usage errors share the config exit code
    assert_eq!(trgs(&["run"]).status.code(), Some(2));
    assert_eq!(trgs(&["bench", "--config", &write_config(dir.path(), QUARTIC)]).status.code(), Some(2));
}

#[test]
fn validate_selector_and_exit_codes() {
    let o = trgs(&["validate", "--suite", ""]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty"));
    assert_eq!(trgs(&["validate", "--suite", "bogus"]).status.code(), Some(2));
    let o = trgs(&["validate", "--suite", "corollary,drtr"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("corollary") && text.contains("PASS") && text.contains("2 of 2"));
}

#[test]
fn bench_prints_matched_table() {
    let dir = TempDir::new().unwrap();
    let vr = QUARTIC.replace("iterations = 40", "iterations = 10\ns3 = 4\nq = 4");
    let o = trgs(&["bench", "--config", &write_config(dir.path(), &vr)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("plain batch = 7"));
    assert!(text.contains("VR error lower at"));
}
