use std::path::Path;
use std::process::{Command, Output};

use tfilter_cli::commands::{run_control, run_filter};
use tfilter_cli::{cmd_control, cmd_filter, cmd_sweep, cmd_synthesize, cmd_verify, ExperimentConfig, Grid};
use tfilter_core::bounds::beta_for_filter;

fn tfilter(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tfilter")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("experiment.toml");
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

#[test]
fn verify_passes_on_presets() {
    for preset in ["scalar", "oscillator", "chain", "identity"] {
        let out = tfilter(&["verify", "--preset", preset, "--seed", "3"]);
        let text = String::from_utf8_lossy(&out.stdout);
        assert_eq!(out.status.code(), Some(0), "{preset}\n{text}");
        assert!(!text.contains("FAIL"));
    }
}

#[test]
fn unobservable_preset_exits_with_config_error() {
    let out = tfilter(&["synthesize", "--preset", "unobservable", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pair (A, C) not observable"));
}

#[test]
fn destabilizing_user_gain_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "seed = 1\neps = 0.1\n[system]\npreset = \"scalar\"\n[gains]\nmode = \"user\"\nl = [[3.0]]\nk = [[-0.2]]\n",
    );
    let out = tfilter(&["synthesize", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stabilizing gains require"));
}

#[test]
fn scalar_synthesis_reports_gains() {
    let exp = ExperimentConfig::for_preset("scalar", 1).resolve().unwrap();
    let report = cmd_synthesize(&exp).unwrap();
    assert!(report.all_passed());
    assert!((exp.gains.l()[(0, 0)] - 0.265564).abs() < 1e-6);
    assert!((exp.gains.k().unwrap()[(0, 0)] + 0.265564).abs() < 1e-6);
}

#[test]
fn single_window_filter_and_control_pass() {
    let mut cfg = ExperimentConfig::for_preset("oscillator", 4);
    cfg.window = Some(1);
    cfg.horizon = Some(200);
    let exp = cfg.resolve().unwrap();
    let filter = cmd_filter(&exp).unwrap();
    assert!(filter.all_passed());
    let sup: f64 = filter.info.iter().find(|(k, _)| k == "sup error").unwrap().1.parse().unwrap();
    assert!(sup <= 1e-12);
    assert!(cmd_control(&exp).unwrap().all_passed());
}

#[test]
fn config_file_round_trip_and_output() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("run.csv");
    let cfg = write_config(
        dir.path(),
        r#"
seed = 21
window = 2
eps = 1.0
horizon = 50
estimator = "attention"

[system]
a = [[0.6, 0.2], [0.0, 0.3]]
b = [[0.0], [1.0]]
c = [[1.0, 0.0]]
w = [[0.5, 0.0], [0.0, 0.5]]
v = [[0.2]]
x0 = [1.0, -1.0]

[noise]
distribution = "uniform"
scale = 0.5
"#,
    );
    let out = tfilter(&["control", "--config", &cfg, "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let csv = std::fs::read_to_string(&out_path).unwrap();
    assert!(csv.contains("# mode=attention"));
    assert!(csv.contains("# rng=ChaCha8Rng"));
    assert!(csv.contains("# seed=21"));
}

/// Re-derives the filter verdict from the CSV text alone.
#[test]
fn filter_verdict_is_recomputable_from_csv() {
    for beta in [None, Some(1e-6)] {
        let mut cfg = ExperimentConfig::for_preset("chain", 5);
        cfg.beta = beta;
        let exp = cfg.resolve().unwrap();
        let report = cmd_filter(&exp).unwrap();
        let csv = report.csv.as_ref().unwrap();
        let eps: f64 = csv
            .lines()
            .find_map(|l| l.strip_prefix("# eps="))
            .unwrap()
            .parse()
            .unwrap();
        let header: Vec<&str> = csv.lines().find(|l| l.starts_with("t,")).unwrap().split(',').collect();
        let col = header.iter().position(|h| *h == "error").unwrap();
        let sup = csv
            .lines()
            .filter(|l| !l.starts_with('#') && !l.starts_with("t,"))
            .map(|l| l.split(',').nth(col).unwrap().parse::<f64>().unwrap())
            .fold(0.0, f64::max);
        assert_eq!(sup <= eps, report.find("filter-bound").unwrap().passed);
    }
}

#[test]
fn single_point_sweep_matches_direct_runs() {
    let exp = ExperimentConfig::for_preset("scalar", 8).resolve().unwrap();
    let beta = beta_for_filter(&exp.sys, &exp.gains, exp.window, 1.0).unwrap().beta;
    let report = cmd_sweep(&exp, &Grid::Beta(vec![beta])).unwrap();
    let csv = report.csv.unwrap();
    let row: Vec<&str> = csv.lines().last().unwrap().split(',').collect();
    let filter = run_filter(&exp, beta, None).unwrap();
    let control = run_control(&exp, beta, None).unwrap();
    assert_eq!(row[4].parse::<f64>().unwrap(), filter.sup_error());
    assert_eq!(row[5].parse::<f64>().unwrap(), control.sup_error());
    assert_eq!(row[6].parse::<f64>().unwrap(), control.cost_gap());
}

#[test]
fn beta_multiplier_sweep_is_monotone() {
    let mut cfg = ExperimentConfig::for_preset("oscillator", 2);
    cfg.sweep.beta_multipliers = Some(vec![1.0, 10.0, 100.0]);
    let exp = cfg.resolve().unwrap();
    let grid = Grid::from_experiment(&exp).unwrap();
    let report = cmd_sweep(&exp, &grid).unwrap();
    assert!(report.all_passed(), "{}", report.render());
}

#[test]
fn sweep_rows_follow_grid_order() {
    let exp = ExperimentConfig::for_preset("scalar", 1).resolve().unwrap();
    let report = cmd_sweep(&exp, &Grid::Eps(vec![0.01, 1.0, 0.1])).unwrap();
    let csv = report.csv.unwrap();
    let eps: Vec<f64> = csv
        .lines()
        .filter(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit()))
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(eps, vec![0.01, 1.0, 0.1]);
}

#[test]
fn corrupted_attention_fails_verify() {
    let mut cfg = ExperimentConfig::for_preset("identity", 1);
    cfg.verify.corrupt_attention = true;
    cfg.verify.trials = 40;
    let report = cmd_verify(&cfg.resolve().unwrap()).unwrap();
    assert!(!report.find("attention-equivalence").unwrap().passed);
    let failed: Vec<_> = report.failures().map(|c| c.name.as_str()).collect();
    assert_eq!(failed, vec!["attention-equivalence"]);
}

#[test]
fn control_needs_a_regulator_gain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "seed = 1\neps = 0.1\n[system]\na = [[0.5]]\nc = [[1.0]]\nw = [[1.0]]\nv = [[1.0]]\n",
    );
    assert_eq!(tfilter(&["filter", "--config", &cfg]).status.code(), Some(0));
    assert_eq!(tfilter(&["control", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn shipped_configs_resolve() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(&path).unwrap().resolve().unwrap();
            seen += 1;
        }
    }
    assert!(seen >= 2);
}
