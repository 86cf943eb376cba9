use std::path::Path;
use std::process::{Command, Output};

use pcn::cli::config::ExperimentConfig;

fn pcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcn"))
        .args(args)
        .env_remove("PCN_MNIST_DIR")
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_string()
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let out = pcn(&[]);
    assert_eq!(out.status.code(), Some(1));
    let all = text(&out.stdout) + &text(&out.stderr);
    assert!(all.contains("Usage"), "{all}");
}

#[test]
fn help_exits_0() {
    assert_eq!(pcn(&["--help"]).status.code(), Some(0));
}

#[test]
fn unknown_subcommand_exits_1() {
    assert_eq!(pcn(&["train-everything"]).status.code(), Some(1));
}

#[test]
fn invalid_field_exits_1_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = pcn(&[
        "weights-learning",
        "--out-dir",
        &out_arg(dir.path()),
        "--set",
        "schedule.eta_mu=-0.5",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("eta_mu"), "{}", text(&out.stderr));
    assert!(!dir.path().join("summary.json").exists());
}

#[test]
fn unknown_key_exits_1_and_names_it() {
    let out = pcn(&["gradcheck", "--set", "run.learning_speed=3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("learning_speed"), "{}", text(&out.stderr));
}

#[test]
fn bad_format_exits_1() {
    let out = pcn(&["gradcheck", "--format", "xml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("format"));
}

#[test]
fn bad_config_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, r#"{"schedule": {"eta_sigma": 2.0}}"#).unwrap();
    let out = pcn(&["variance-estimation", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("eta_sigma"), "{}", text(&out.stderr));

    let out = pcn(&["variance-estimation", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("/nonexistent/cfg.json"));
}

#[test]
fn missing_mnist_exits_2_and_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no-mnist-here");
    let out = pcn(&[
        "mnist-classify",
        "--mnist-dir",
        missing.to_str().unwrap(),
        "--out-dir",
        &out_arg(&dir.path().join("out")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("no-mnist-here"), "{}", text(&out.stderr));
}

#[test]
fn mnist_dir_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pcn"))
        .args(["autoencode", "--out-dir", &out_arg(&dir.path().join("out"))])
        .env("PCN_MNIST_DIR", dir.path().join("from-env"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("from-env"), "{}", text(&out.stderr));
}

#[test]
fn gradcheck_seed_7_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = pcn(&["gradcheck", "--seed", "7", "--out-dir", &out_arg(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let line = text(&out.stdout);
    assert!(line.starts_with("gradcheck seed=7"), "{line}");
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    let worst = summary["metrics"]["max_relative_error"].as_f64().unwrap();
    assert!(worst < 1e-6, "{worst}");
    assert!(dir.path().join("gradcheck.json").is_file());
}

#[test]
fn variance_estimation_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, r#"{"experiment": "variance-estimation", "run": {"seeds": 4}}"#).unwrap();
    let out_dir = dir.path().join("out");
    let out = pcn(&["variance-estimation", "--config", cfg_path.to_str().unwrap(), "--out-dir", &out_arg(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));

    let traces = std::fs::read_to_string(out_dir.join("traces.csv")).unwrap();
    assert_eq!(traces.lines().next(), Some("step,layer,quantity,value"));
    let last_input_sigma: f64 = traces
        .lines()
        .filter(|l| l.contains(",0,sigma,"))
        .last()
        .and_then(|l| l.rsplit(',').next())
        .unwrap()
        .parse()
        .unwrap();
    assert!((7.0..13.0).contains(&last_input_sigma), "{last_input_sigma}");

    let echoed = std::fs::read_to_string(out_dir.join("config.json")).unwrap();
    let reparsed = ExperimentConfig::from_json_str(&echoed).unwrap();
    assert_eq!(reparsed.run.seeds, 4);
    assert_eq!(reparsed.out_dir, out_dir);
}

#[test]
fn echoed_config_round_trips_and_flags_win_over_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, r#"{"seed": 3, "run": {"seeds": 2, "steps": 200, "tail": 50}}"#).unwrap();
    let out_dir = dir.path().join("out");
    let out = pcn(&[
        "weights-learning",
        "--config",
        cfg_path.to_str().unwrap(),
        "--seed",
        "9",
        "--format",
        "json",
        "--set",
        "schedule.eta_theta=0.02",
        "--out-dir",
        &out_arg(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let echoed = std::fs::read_to_string(out_dir.join("config.json")).unwrap();
    let cfg = ExperimentConfig::from_json_str(&echoed).unwrap();
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.run.steps, 200);
    assert_eq!(cfg.schedule.eta_theta, 0.02);
    assert_eq!(ExperimentConfig::from_json_str(&cfg.to_json_pretty()).unwrap(), cfg);
    assert!(out_dir.join("traces.json").is_file());
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config_hash"].as_str().unwrap(), cfg.hash());
    assert!(out_dir.join("timing.json").is_file());
}

#[test]
fn fisher_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = pcn(&["fisher-check", "--out-dir", &out_arg(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(dir.path().join("fisher_checks.json").is_file());
}

#[test]
fn library_entry_point_matches_binary_codes() {
    assert_eq!(pcn::cli::run(["pcn"]), 1);
    assert_eq!(pcn::cli::run(["pcn", "gradcheck", "--set", "run.networks=0"]), 1);
}
