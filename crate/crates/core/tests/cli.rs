use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mifa_sim::harness::ExperimentConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mifa-sim"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("examples/configs")
        .join(name)
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn golden_run_csv() {
    let out = bin()
        .arg("run")
        .arg(fixture("golden.toml"))
        .output()
        .unwrap();
    assert_eq!(ok(&out), fs::read_to_string(fixture("golden.csv")).unwrap());
}

#[test]
fn bundled_examples_run() {
    let dir = tempfile::tempdir().unwrap();
    for name in [
        "quadratic_bernoulli.toml",
        "logistic_labels.toml",
        "nonconvex_full.toml",
        "straggler.toml",
    ] {
        let out_path = dir.path().join(name.replace(".toml", ".csv"));
        let out = bin()
            .arg("run")
            .arg(example(name))
            .args(["--seed", "1", "--out"])
            .arg(&out_path)
            .output()
            .unwrap();
        ok(&out);
        let text = fs::read_to_string(&out_path).unwrap();
        assert!(text.starts_with("seed,t,t_prime,f_gap,avg_gap,grad_norm_sq,min_grad_norm_sq,tau_bar,tau_max,oracle_calls\n"));
        let aggregate =
            fs::read_to_string(dir.path().join(name.replace(".toml", ".aggregate.csv"))).unwrap();
        assert!(aggregate.starts_with("t,t_prime_mean,t_prime_stderr,f_gap_mean,"));
        assert!(dir
            .path()
            .join(name.replace(".toml", ".meta.json"))
            .exists());
    }
}

#[test]
fn validate_reports_mu_above_l() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(fixture("golden.toml"))
        .unwrap()
        .replace("mu = 1.0", "mu = 3.0");
    let path = dir.path().join("bad.toml");
    fs::write(&path, text).unwrap();
    let out = bin().arg("validate").arg(&path).output().unwrap();
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(
        err.contains("problem.mu") && err.contains("exceeds L"),
        "{err}"
    );
}

#[test]
fn malformed_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(fixture("golden.toml"))
        .unwrap()
        .replace("local_steps = 2", "local_steps = 2\nlocal_step = 3");
    let path = dir.path().join("bad.toml");
    fs::write(&path, text).unwrap();
    let out = bin().arg("run").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("run.local_step"), "{}", stderr(&out));
}

/// Drops every column but the availability ones: seed, t, tau_bar, tau_max.
fn availability_columns(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            format!("{},{},{},{}", f[0], f[1], f[7], f[8])
        })
        .collect()
}

#[test]
fn compare_shares_availability_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cmp.csv");
    ok(&bin()
        .arg("compare")
        .arg(fixture("golden.toml"))
        .args([
            "--algorithms",
            "mifa,biased_fedavg,is_fedavg,mifa_delta",
            "--out",
        ])
        .arg(&out)
        .output()
        .unwrap());
    let files: Vec<String> = [
        "mifa",
        "biased_fedavg",
        "is_fedavg_active_count",
        "mifa_delta",
    ]
    .iter()
    .map(|a| fs::read_to_string(dir.path().join(format!("cmp.{a}.csv"))).unwrap())
    .collect();
    for f in &files[1..] {
        assert_eq!(availability_columns(f), availability_columns(&files[0]));
    }
    // the naive and delta variants agree on everything
    assert_eq!(files[3], files[0]);
}

#[test]
fn config_round_trip_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::load(&fixture("golden.toml")).unwrap();
    let path = dir.path().join("again.toml");
    fs::write(&path, cfg.to_toml_string().unwrap()).unwrap();
    let a = ok(&bin()
        .arg("run")
        .arg(fixture("golden.toml"))
        .output()
        .unwrap());
    let b = ok(&bin().arg("run").arg(&path).output().unwrap());
    assert_eq!(a, b);
}

#[test]
fn partial_results_do_not_replace_complete_ones() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    ok(&bin()
        .arg("run")
        .arg(fixture("golden.toml"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap());
    let complete = fs::read_to_string(&out).unwrap();
    // a step far beyond the stability limit diverges
    let text = fs::read_to_string(fixture("golden.toml"))
        .unwrap()
        .replace(
            "kind = \"strongly_convex\"\nt0 = 1.0",
            "kind = \"experimental_decay\"\neta0 = 1e6",
        )
        .replace("rounds = 6", "rounds = 200");
    let bad = dir.path().join("diverge.toml");
    fs::write(&bad, text).unwrap();
    let res = bin()
        .arg("run")
        .arg(&bad)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    ok(&res);
    assert!(stderr(&res).contains("partial"), "{}", stderr(&res));
    assert_eq!(fs::read_to_string(&out).unwrap(), complete);
    let partial = fs::read_to_string(dir.path().join("r.partial.csv")).unwrap();
    assert!(partial.lines().count() < 2 * 200 + 1);
    let aggregate = fs::read_to_string(dir.path().join("r.partial.aggregate.csv")).unwrap();
    assert!(aggregate.lines().nth(1).unwrap().ends_with(",1"));
}

#[test]
fn wait_study_flags() {
    let text = ok(&bin()
        .args([
            "wait-study",
            "--n",
            "4",
            "--s",
            "2",
            "--p",
            "1,1,1,1",
            "--trials",
            "50",
        ])
        .output()
        .unwrap());
    assert_eq!(
        text,
        "mean_wait,stderr,lower_bound\n1.0000000000000000e0,0.0000000000000000e0,5.0000000000000000e-1\n"
    );
}

#[test]
fn tau_study_writes_tail_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tau.csv");
    let res = bin()
        .arg("tau-study")
        .arg(example("tau_study.toml"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    ok(&res);
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("device,p,k,empirical,expected,stderr\n"));
    assert_eq!(text.lines().count(), 1 + 20 * 21);
    assert!(stderr(&res).contains("held in"));
}
