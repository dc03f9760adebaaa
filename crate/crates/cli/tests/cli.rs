use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pbit-nqs"));
    c.env("PBIT_NQS_THREADS", "2");
    c
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_TRAIN: &str = "\
run.seed = 4
lattice.L = 3
lattice.gamma = 3.044
sampling.ns = 200
training.iterations = 12
evaluation.samples = 2000
";

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn param_count_matches_tables() {
    for (args, want) in [
        (vec!["rbm", "10", "2"], "1500"),
        (vec!["dbm", "10", "1", "1"], "1300"),
        (vec!["dbm", "35", "2", "2"], "35525"),
    ] {
        let mut full = vec!["param-count"];
        full.extend(args);
        let o = run(&full);
        assert_eq!(code(&o), 0);
        assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), want);
    }
}

#[test]
fn param_count_rejects_bad_radius() {
    assert_eq!(code(&run(&["param-count", "dbm", "4", "3", "1"])), 2);
    assert_eq!(code(&run(&["param-count", "dbm", "10", "1"])), 2);
}

#[test]
fn oracle_reproduces_committed_golden_files() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&["oracle", fixture("oracle.toml").to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for name in ["golden.csv", "marginals.csv"] {
        assert_eq!(
            fs::read_to_string(out.path().join(name)).unwrap(),
            fs::read_to_string(fixture(name)).unwrap(),
            "{name} drifted"
        );
    }
    let golden = fs::read_to_string(out.path().join("golden.csv")).unwrap();
    assert!(golden.lines().any(|l| l == "single_spin,1,1,3.044,-3.0440000000"));
}

#[test]
fn oracle_refuses_thirty_sites() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[[oracle.cases]]\nid = \"big\"\nN = 30\ngamma = 1.0\n");
    let out = dir.path().join("out");
    let o = run(&["oracle", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("30 sites"));
    assert!(!out.exists(), "nothing should be written on a size error");
}

#[test]
fn missing_lattice_length_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lattice.gamma = 1.0\n");
    let o = run(&["train", &cfg, "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("lattice.L"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL_TRAIN}sampling.nss = 5\n"));
    let o = run(&["train", &cfg, "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nss"), "{}", stderr(&o));
}

#[test]
fn bad_thread_env_is_config_error() {
    let o = bin()
        .env("PBIT_NQS_THREADS", "zero")
        .args(["param-count", "rbm", "10", "1"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn train_is_deterministic_and_self_describing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_TRAIN);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&["train", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let metrics = fs::read(a.join("metrics.csv")).unwrap();
    assert_eq!(metrics, fs::read(b.join("metrics.csv")).unwrap());
    let text = String::from_utf8(metrics).unwrap();
    assert_eq!(text.lines().count(), 1 + 12);
    assert!(text.starts_with("iter,energy_per_spin"));

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);

    // Rerunning from the copied config reproduces the checkpoint.
    let c = dir.path().join("c");
    let o = run(&["train", a.join("config.toml").to_str().unwrap(), "--out", c.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        fs::read(a.join("checkpoint.json")).unwrap(),
        fs::read(c.join("checkpoint.json")).unwrap()
    );

    let ev = dir.path().join("ev");
    let ckpt = a.join("checkpoint.json");
    let o = run(&["evaluate", &cfg, "--checkpoint", ckpt.to_str().unwrap(), "--out", ev.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let row = fs::read_to_string(ev.join("evaluation.csv")).unwrap();
    let e: f64 = row.lines().nth(1).unwrap().split(',').next().unwrap().parse().unwrap();
    assert!((-3.6..-2.5).contains(&e), "{e}");

    let sm = dir.path().join("sm");
    let o = run(&["sample", &cfg, "--checkpoint", ckpt.to_str().unwrap(), "--count", "25", "--out", sm.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(sm.join("samples.txt")).unwrap().lines().count(), 25);

    let ps = dir.path().join("ps");
    let scan_cfg = write_config(
        dir.path(),
        &format!("{SMALL_TRAIN}partition.P = 2\npartition.tau = [1, 3]\npartition.samples = 500\n"),
    );
    let o = run(&["partition-scan", &scan_cfg, "--checkpoint", ckpt.to_str().unwrap(), "--out", ps.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let scan = fs::read_to_string(ps.join("scan.csv")).unwrap();
    assert_eq!(scan.lines().next(), Some("tau,deviation,stderr"));
    assert_eq!(scan.lines().count(), 3);
    assert_eq!(fs::read_to_string(ps.join("partition.txt")).unwrap().lines().count(), 18);
}

#[test]
fn mismatched_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_TRAIN);
    let a = dir.path().join("a");
    assert_eq!(code(&run(&["train", &cfg, "--out", a.to_str().unwrap()])), 0);
    let other = write_config(dir.path(), &SMALL_TRAIN.replace("lattice.L = 3", "lattice.L = 4"));
    let o = run(&[
        "evaluate",
        &other,
        "--checkpoint",
        a.join("checkpoint.json").to_str().unwrap(),
        "--out",
        dir.path().join("e").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn diverging_run_exits_with_numerical_code() {
    // A huge learning rate with negligible damping blows the parameters up.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{SMALL_TRAIN}optimizer.eta_max = 1e12\noptimizer.eta_min = 1e12\noptimizer.lambda0 = 1e-12\noptimizer.lambda_min = 1e-12\n"),
    );
    let o = run(&["train", &cfg, "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}
