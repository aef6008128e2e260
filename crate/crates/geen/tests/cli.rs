use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn geen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geen")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn path(dir: &Path, rel: &str) -> String {
    dir.join(rel).to_str().unwrap().to_string()
}

fn simulate(dir: &Path) {
    let out = geen(&[
        "simulate", "--experiment", "baseline", "--seed", "3", "--sizes", "120,50,50",
        "--out", &path(dir, "data"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

const SMALL_CFG: &str = "m = 30\nn_obs_train = 16\nn_obs_val = 4\nbatch_obs = 4\nmax_epochs = 2\nhidden = 4\ndepth = 3\n";

#[test]
fn unknown_experiment_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = geen(&["simulate", "--experiment", "bogus", "--out", &path(dir.path(), "x")]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for name in ["baseline", "linear_error", "double_error", "no_normalization"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn simulated_files_carry_provenance() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let text = fs::read_to_string(dir.path().join("data/train.csv")).unwrap();
    assert!(text.starts_with("# geen-dataset v1\n# seed=3\n# experiment=baseline\n# rng=chacha8\n"));
    assert!(text.contains("\nx1,x2,x3,x4,xstar\n"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 121);
}

#[test]
fn single_point_observations_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    fs::write(dir.path().join("bad.toml"), "m = 1\n").unwrap();
    let out = geen(&[
        "train", "--data", &path(dir.path(), "data"),
        "--config", &path(dir.path(), "bad.toml"), "--out", &path(dir.path(), "run"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("m must be at least 2"));
    assert!(!dir.path().join("run").exists());
}

#[test]
fn train_then_evaluate_with_and_without_truth() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d);
    fs::write(d.join("cfg.toml"), SMALL_CFG).unwrap();
    let out = geen(&[
        "train", "--data", &path(d, "data"), "--config",
        &path(d, "cfg.toml"), "--seed", "9", "--out", &path(d, "run"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["model.json", "history.csv", "config.toml", "metadata.json"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    assert!(fs::read_to_string(d.join("run/config.toml")).unwrap().contains("seed = 9"));
    let hist = fs::read_to_string(d.join("run/history.csv")).unwrap();
    assert!(hist.starts_with("epoch,train_loss,val_loss\n1,"));

    let out = geen(&["evaluate", "--model", &path(d, "run/model.json"), "--data", &path(d, "data/test.csv"), "--out", &path(d, "ev")]);
    assert!(out.status.success());
    let eval: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("ev/eval.json")).unwrap()).unwrap();
    assert_eq!(eval["n_test"], 50);
    assert_eq!(fs::read_to_string(d.join("ev/scatter.csv")).unwrap().lines().count(), 51);

    // Without a truth column evaluation is refused; prediction still works.
    strip_truth(&d.join("data/test.csv"), &d.join("blind.csv"));
    let out = geen(&["evaluate", "--model", &path(d, "run/model.json"), "--data", &path(d, "blind.csv"), "--out", &path(d, "ev2")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no ground truth"));
    let out = geen(&["predict", "--model", &path(d, "run/model.json"), "--data", &path(d, "blind.csv"), "--out", &path(d, "pred")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let est = fs::read_to_string(d.join("pred/estimates.csv")).unwrap();
    assert_eq!(est.lines().count(), 51);
    let scatter = fs::read_to_string(d.join("ev/scatter.csv")).unwrap();
    let xhat: Vec<&str> = scatter.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(est.lines().skip(1).collect::<Vec<_>>(), xhat);
}

fn strip_truth(from: &Path, to: &Path) {
    let text = fs::read_to_string(from).unwrap();
    let stripped: String = text
        .lines()
        .map(|l| if l.starts_with('#') { l.to_string() } else { l.rsplit_once(',').unwrap().0.to_string() })
        .map(|l| l + "\n")
        .collect();
    fs::write(to, stripped).unwrap();
}

#[test]
fn training_never_depends_on_truth_columns() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d);
    fs::write(d.join("cfg.toml"), SMALL_CFG).unwrap();
    fs::create_dir(d.join("blind")).unwrap();
    for f in ["train.csv", "val.csv"] {
        strip_truth(&d.join("data").join(f), &d.join("blind").join(f));
    }
    for (data, out) in [("data", "a"), ("blind", "b")] {
        let res = geen(&["train", "--data", &path(d, data), "--config", &path(d, "cfg.toml"), "--out", &path(d, out)]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    assert_eq!(fs::read(d.join("a/model.json")).unwrap(), fs::read(d.join("b/model.json")).unwrap());
    assert_eq!(fs::read(d.join("a/history.csv")).unwrap(), fs::read(d.join("b/history.csv")).unwrap());
}

#[test]
fn diagnose_requires_zero_noise_and_latents() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d);
    let out = geen(&["diagnose", "--data", &path(d, "data/test.csv"), "--noise", "0.5,1", "--m", "20", "--out", &path(d, "x.csv")]);
    assert_eq!(out.status.code(), Some(2));
    let out = geen(&["diagnose", "--data", &path(d, "data/test.csv"), "--m", "20", "--n-obs", "3", "--out", &path(d, "x.csv")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(d.join("x.csv")).unwrap();
    assert!(csv.starts_with("noise_std,mean_loss\n0.0,"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn tune_writes_sorted_leaderboard() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d);
    fs::write(d.join("cfg.toml"), format!("{SMALL_CFG}max_epochs = 1\n").replace("max_epochs = 2\n", "")).unwrap();
    let out = geen(&[
        "tune", "--data", &path(d, "data"), "--config", &path(d, "cfg.toml"),
        "--out", &path(d, "tune"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let board = fs::read_to_string(d.join("tune/leaderboard.csv")).unwrap();
    let losses: Vec<f64> = board.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(losses.len(), 12);
    assert!(losses.windows(2).all(|w| w[0] <= w[1]));
    assert!(fs::read_to_string(d.join("tune/best_config.toml")).unwrap().contains("lambda"));

    fs::write(d.join("wide.toml"), "grid_w = [5.0]\n").unwrap();
    let out = geen(&[
        "tune", "--data", &path(d, "data"), "--config", &path(d, "wide.toml"),
        "--out", &path(d, "tune2"),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn report_aggregates_multi_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("cfg.toml"), SMALL_CFG).unwrap();
    for exp in ["baseline", "double_error"] {
        let out = geen(&[
            "multi-run", "--experiment", exp, "--runs", "2", "--sizes", "100,40,40",
            "--config", &path(d, "cfg.toml"), "--out", &path(d, exp),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let out = geen(&["report", &path(d, "baseline"), &path(d, "double_error")]);
    assert!(out.status.success());
    let table = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "experiment,min,median,max,corr_x1,n_runs,n_failed");
    assert!(lines[1].starts_with("baseline,") && lines[1].ends_with(",2,0"));
    assert!(lines[2].starts_with("double_error,"));
}

#[test]
fn report_groups_single_run_directories() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d);
    fs::write(d.join("cfg.toml"), SMALL_CFG).unwrap();
    let mut runs = Vec::new();
    for seed in ["1", "2", "3"] {
        let run = path(d, &format!("run{seed}"));
        let out = geen(&["train", "--data", &path(d, "data"), "--config", &path(d, "cfg.toml"), "--seed", seed, "--out", &run]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let out = geen(&["evaluate", "--model", &format!("{run}/model.json"), "--data", &path(d, "data/test.csv"), "--out", &run]);
        assert!(out.status.success());
        runs.push(run);
    }
    let mut args = vec!["report", "--out"];
    let table_path = path(d, "table.csv");
    args.push(&table_path);
    args.extend(runs.iter().map(String::as_str));
    assert!(geen(&args).status.success());
    let table = fs::read_to_string(d.join("table.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
    assert!(table.lines().nth(1).unwrap().starts_with("baseline,") && table.ends_with(",3,0\n"));
}
