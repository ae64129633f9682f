use std::path::Path;
use std::process::{Command, Output};

use todlab::activeloop::{snapshot_file, ExperimentConfig};
use todlab::cli::RunManifest;
use todlab::data::DatasetSource;

fn todlab(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_todlab"));
    cmd.args(args).env_remove("TODLAB_OUT");
    if let Some(dir) = env_out {
        cmd.env("TODLAB_OUT", dir);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, n: usize, cycles: usize, seeds: Vec<u64>) -> String {
    let mut cfg = ExperimentConfig::new(DatasetSource::TwoMoons { n, noise: 0.2 });
    cfg.num_cycles = cycles;
    cfg.seeds = seeds;
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_seven_cycles_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), 400, 7, vec![0, 1]);
    let a = tmp.path().join("a");
    let o = todlab(&["--threads", "2", "run", &cfg, a.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(!a.join("INCOMPLETE").exists());

    for seed in [0, 1] {
        let cycles = std::fs::read_to_string(a.join(format!("seed{seed}_cod/cycles.csv"))).unwrap();
        assert_eq!(cycles.lines().count(), 8);
        assert!(cycles.starts_with("cycle,labeled_count,labeled_fraction,test_accuracy,"));
    }

    // the default output root comes from the environment
    let o = todlab(&["run", &cfg], Some(&tmp.path().join("root")));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let b = tmp.path().join("root/run");
    for file in [
        "cycles.csv",
        "selections.csv",
        "train_history_c3.csv",
        "grad_norm.csv",
    ] {
        let fa = std::fs::read(a.join("seed1_cod").join(file)).unwrap();
        let fb = std::fs::read(b.join("seed1_cod").join(file)).unwrap();
        assert_eq!(fa, fb, "{file} differs between runs");
    }

    // the echoed configuration re-parses to the same object
    let manifest: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    let echoed: ExperimentConfig =
        serde_json::from_str(&std::fs::read_to_string(a.join("config.json")).unwrap()).unwrap();
    assert_eq!(manifest.config, echoed);
    assert_eq!(manifest.seeds, vec![0, 1]);

    let o = todlab(&["report", a.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = std::fs::read_to_string(a.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 8);
}

#[test]
fn strategy_override_and_unknown_strategy() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), 200, 2, vec![4]);
    let out = tmp.path().join("out");
    let o = todlab(
        &[
            "run",
            &cfg,
            out.to_str().unwrap(),
            "--strategy",
            "random,emaod",
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(out.join("seed4_random/cycles.csv").exists());
    assert!(out.join("seed4_emaod/cycles.csv").exists());

    let o = todlab(&["run", &cfg, "--strategy", "entropy"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("random, cod, emaod"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_two_and_io_errors_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"dataset": {"kind": "two_moons", "n": 100, "noise": 0.1}, "budget": 0.1}"#,
    )
    .unwrap();
    let o = todlab(&["run", bad.to_str().unwrap()], Some(tmp.path()));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("budget"), "{}", stderr(&o));

    let too_many = tmp.path().join("cycles.json");
    std::fs::write(
        &too_many,
        r#"{"dataset": {"kind": "two_moons", "n": 100, "noise": 0.1}, "num_cycles": 30}"#,
    )
    .unwrap();
    assert_eq!(
        todlab(&["run", too_many.to_str().unwrap()], Some(tmp.path()))
            .status
            .code(),
        Some(2)
    );

    let missing = tmp.path().join("nope.json");
    assert_eq!(
        todlab(&["run", missing.to_str().unwrap()], Some(tmp.path()))
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn verify_bounds_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("b");
    let o = todlab(
        &[
            "verify-bounds",
            "--eta",
            "1e-3",
            "--T",
            "1",
            "--trials",
            "1000",
            "--out",
            out.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("bounds.csv")).unwrap();
    assert!(csv.starts_with("seed,eta,T,lhs,rhs,slack,passed\n"));
    assert_eq!(csv.lines().count(), 1 + 2000);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(
        stdout.contains("relu-lipschitz: pass rate 1.0000"),
        "{stdout}"
    );

    let o = todlab(
        &[
            "verify-bounds",
            "--trials",
            "0",
            "--out",
            out.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn loss_quality_on_saved_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), 2000, 3, (0..10).collect());
    let out = tmp.path().join("run");
    let o = todlab(&["run", &cfg, out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let mut positive = 0;
    for seed in 0..10 {
        let dir = out.join(format!("seed{seed}_cod"));
        let o = todlab(&["loss-quality", dir.to_str().unwrap(), "3"], None);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let summary = std::fs::read_to_string(dir.join("loss_quality_c3/summary.txt")).unwrap();
        let rho: f64 = summary
            .lines()
            .find_map(|l| l.strip_prefix("spearman="))
            .unwrap()
            .parse()
            .unwrap();
        positive += (rho > 0.0) as usize;
        assert!(dir.join("loss_quality_c3/buckets.csv").exists());
        assert!(dir.join("loss_quality_c3/capture.csv").exists());
    }
    assert!(positive >= 9, "spearman > 0 on {positive}/10 seeds");

    let dir = out.join("seed0_cod");
    let o = todlab(
        &[
            "loss-quality",
            dir.to_str().unwrap(),
            "2",
            "--gd-steps",
            "5",
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.join("loss_quality_c2_k5/summary.txt").exists());

    // identical consecutive snapshots: every score is zero, correlation undefined
    std::fs::copy(dir.join(snapshot_file(1)), dir.join(snapshot_file(2))).unwrap();
    let o = todlab(&["loss-quality", dir.to_str().unwrap(), "2"], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary = std::fs::read_to_string(dir.join("loss_quality_c2/summary.txt")).unwrap();
    assert!(summary.contains("spearman=undefined"), "{summary}");

    std::fs::remove_file(dir.join(snapshot_file(3))).unwrap();
    let o = todlab(&["loss-quality", dir.to_str().unwrap(), "3"], None);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let o = todlab(
        &["report", tmp.path().join("nothing").to_str().unwrap()],
        None,
    );
    assert_eq!(o.status.code(), Some(4));
}
