//! End-to-end checks of the compiled binary: frozen CSV schemas, exit codes,
//! byte-identical reruns under fixed seeds, and config precedence.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_overgen"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_of(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}, stderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

const ANALYZE_HEADER: &str = "n_packets,field,eps,gen_size,n_gens,lower,mean,upper,std_dev,\
                              asym_log,asym_saturated,budget_1e3";
const SIMULATE_HEADER: &str = "scheme,n_packets,base_size,gen_size,annex,field,eps,trials,seed,\
                               mean,std_dev,min,p50,p90,p99,max";
const SWEEP_HEADER: &str = "mode,n_packets,base_size,gen_size,annex,field,eps,trials,seed,\
                            estimate,annex_mean,annex_std,head_to_toe_mean,head_to_toe_std,\
                            disjoint_mean,disjoint_std";
const COMPARE_HEADER: &str = "n_packets,field,eps,gen_size,annex_best,annex_latency,disjoint_latency";

#[test]
fn analyze_schema_and_rerun_identical() {
    let args = ["analyze", "--n-packets", "60", "--gen-range", "10:20:5"];
    let first = stdout_of(&run(&args));
    let second = stdout_of(&run(&args));
    assert_eq!(first, second, "analytic output must not drift between runs");
    let mut lines = first.lines();
    assert_eq!(lines.next(), Some(ANALYZE_HEADER));
    assert_eq!(lines.count(), 3, "one row per grid point 10, 15, 20");
}

#[test]
fn analyze_out_file_matches_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.csv");
    let args = ["analyze", "--n-packets", "60", "--gen-size", "10"];
    let piped = stdout_of(&run(&args));
    let with_out = run(&["analyze", "--n-packets", "60", "--gen-size", "10", "--out"])
        .status
        .code();
    assert_eq!(with_out, Some(2), "--out without a value is rejected");
    let out = run(&[
        "analyze",
        "--n-packets",
        "60",
        "--gen-size",
        "10",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty(), "file mode writes nothing to stdout");
    assert_eq!(std::fs::read_to_string(&path).unwrap(), piped);
}

#[test]
fn simulate_schema_and_seeded_rerun_identical() {
    let args = [
        "simulate",
        "--n-packets",
        "60",
        "--gen-size",
        "10",
        "--trials",
        "200",
        "--seed",
        "42",
    ];
    let first = stdout_of(&run(&args));
    let second = stdout_of(&run(&args));
    assert_eq!(first, second, "same seed must reproduce the sample exactly");
    assert_eq!(first.lines().next(), Some(SIMULATE_HEADER));

    let other_seed = stdout_of(&run(&[
        "simulate",
        "--n-packets",
        "60",
        "--gen-size",
        "10",
        "--trials",
        "200",
        "--seed",
        "43",
    ]));
    assert_ne!(first, other_seed, "a different seed must change the sample");
}

#[test]
fn simulate_failure_curve_companion() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.csv");
    let out = run(&[
        "simulate",
        "--n-packets",
        "60",
        "--gen-size",
        "1",
        "--trials",
        "400",
        "--seed",
        "5",
        "--failure-curve",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let companion = dir.path().join("run_failure.csv");
    let body = std::fs::read_to_string(&companion).unwrap();
    let mut lines = body.lines();
    assert_eq!(lines.next(), Some("t,empirical,floor"));
    let mut prev = f64::INFINITY;
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 3);
        let emp: f64 = cells[1].parse().unwrap();
        assert!(emp <= prev, "tail curve must be non-increasing");
        prev = emp;
    }
}

#[test]
fn sweep_annex_l0_rows_agree_across_schemes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let args = [
        "sweep-annex",
        "--n-packets",
        "60",
        "--base-size",
        "12",
        "--annex-range",
        "0:4:2",
        "--trials",
        "150",
        "--seed",
        "3",
        "--out",
        path.to_str().unwrap(),
    ];
    assert!(run(&args).status.success());
    let body = std::fs::read_to_string(&path).unwrap();
    let mut lines = body.lines();
    assert_eq!(lines.next(), Some(SWEEP_HEADER));
    let l0: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(l0[4], "0", "first row is the empty annex");
    // Cells 10..=15: annex, head-to-toe, disjoint mean and std pairs. With no
    // annex all three schemes run the identical layout and seed.
    assert_eq!(l0[10], l0[12]);
    assert_eq!(l0[10], l0[14]);
    assert_eq!(l0[11], l0[13]);
    assert_eq!(l0[11], l0[15]);

    let overlap = std::fs::read_to_string(dir.path().join("sweep_overlap.csv")).unwrap();
    assert_eq!(overlap.lines().next(), Some("annex,s,omega,remaining"));

    let again = dir.path().join("sweep2.csv");
    let mut args2 = args;
    args2[args.len() - 1] = again.to_str().unwrap();
    assert!(run(&args2).status.success());
    assert_eq!(
        body,
        std::fs::read_to_string(&again).unwrap(),
        "seeded sweep must reproduce byte for byte"
    );
}

#[test]
fn compare_schema() {
    let out = run(&["compare", "--n-packets", "60", "--gen-range", "10:20:10"]);
    let body = stdout_of(&out);
    let mut lines = body.lines();
    assert_eq!(lines.next(), Some(COMPARE_HEADER));
    assert_eq!(lines.count(), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("best annex point"), "stderr: {err}");
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("job.toml");
    std::fs::write(
        &cfg,
        "n_packets = 60\ngen_size = 10\ntrials = 200\nseed = 9\n",
    )
    .unwrap();
    let from_file = stdout_of(&run(&["simulate", "--config", cfg.to_str().unwrap()]));
    let row: Vec<&str> = from_file.lines().nth(1).unwrap().split(',').collect();
    assert_eq!((row[1], row[7], row[8]), ("60", "200", "9"));

    let overridden = stdout_of(&run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--trials",
        "100",
    ]));
    let row: Vec<&str> = overridden.lines().nth(1).unwrap().split(',').collect();
    assert_eq!((row[7], row[8]), ("100", "9"), "flag beats file, file beats default");
}

#[test]
fn out_dir_env_routes_bare_filenames() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["analyze", "--n-packets", "60", "--gen-size", "10", "--out", "routed.csv"])
        .env("OVERGEN_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("routed.csv").is_file());
    assert!(!Path::new("routed.csv").exists(), "cwd must stay clean");

    // Explicit paths are taken literally even with the variable set.
    let explicit = dir.path().join("sub.csv");
    let out = bin()
        .args([
            "analyze",
            "--n-packets",
            "60",
            "--gen-size",
            "10",
            "--out",
            explicit.to_str().unwrap(),
        ])
        .env("OVERGEN_OUT_DIR", dir.path().join("elsewhere"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(explicit.is_file());
}

#[test]
fn config_mistakes_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "n_packets = 60\nnot_a_key = 5\n").unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["simulate", "--gen-size", "10", "--scheme", "bogus"],
        vec!["simulate", "--gen-size", "10", "--config", bad.to_str().unwrap()],
        vec!["analyze"],
        vec!["simulate", "--gen-size", "10", "--eps", "1.0"],
        vec!["simulate", "--gen-size", "10", "--trials", "0"],
        vec!["simulate", "--gen-size", "10", "--failure-curve"],
        vec!["sweep-annex", "--gen-size", "10", "--base-size", "8", "--annex-range", "0:2:1"],
        vec!["analyze", "--gen-range", "10:5:1"],
        vec!["simulate", "--scheme", "annex"],
    ];
    for args in cases {
        let out = run(&args);
        assert_eq!(
            out.status.code(),
            Some(2),
            "args {:?} should be a config error, stderr: {}",
            args,
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(
            String::from_utf8_lossy(&out.stderr).contains("config error"),
            "args {args:?} must report on stderr"
        );
    }
}
