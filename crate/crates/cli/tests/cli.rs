use std::fs;
use std::process::Command;

use esdkf::graph::{Block, SwitchingSignal};
use esdkf::scenario::{MatrixSeries, ScenarioFile, VectorSeries, SIM_IV};
use esdkf_cli::{cmd_check, cmd_run, cmd_trace, load, ScenarioArgs};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_esdkf"))
}

fn preset_args() -> ScenarioArgs {
    ScenarioArgs {
        scenario: None,
        preset: Some(SIM_IV.into()),
        runs: None,
        horizon: None,
        seed: None,
        theta: None,
    }
}

fn diag(d: usize, v: f64) -> Vec<Vec<f64>> {
    (0..d).map(|i| (0..d).map(|j| if i == j { v } else { 0.0 }).collect()).collect()
}

#[test]
fn preset_loads_with_overrides() {
    let s = load(&preset_args()).unwrap();
    assert_eq!(s.system.original().state_dim(), 4);
    assert_eq!(s.system.original().dynamics_dim(), 2);
    assert_eq!(s.sensor_count(), 4);
    assert_eq!(s.filter.theta(), 0.1);
    assert_eq!(s.initial_estimate.covariance(), &(esdkf::linalg::Matrix::identity(6, 6) * 100.0));
    assert!(s.initial_estimate.state().iter().all(|&v| v == 0.0));

    let mut args = preset_args();
    args.theta = Some(0.5);
    args.runs = Some(3);
    args.horizon = Some(17);
    args.seed = Some(11);
    let s = load(&args).unwrap();
    assert_eq!(s.filter.theta(), 0.5);
    assert_eq!((s.experiment.runs, s.experiment.horizon, s.experiment.seed), (3, 17, 11));
}

#[test]
fn check_reports_preset_assumptions() {
    let report = cmd_check(&load(&preset_args()).unwrap()).unwrap();
    assert!(report.all_hold(), "{}", report.render());
    assert_eq!(report.intervals.len(), 13);
    assert!(report.intervals.iter().all(|i| i.2));
}

#[test]
fn check_flags_stuck_topology() {
    let mut file = ScenarioFile::preset(SIM_IV).unwrap();
    file.topology.switching = SwitchingSignal::Explicit(vec![0]);
    let report = cmd_check(&file.validate().unwrap()).unwrap();
    assert!(!report.connected);
    assert!(report.intervals.iter().all(|i| !i.2));
    assert!(report.render().contains("joint connectivity: VIOLATED"));
}

#[test]
fn check_single_node_is_connected() {
    let mut file = ScenarioFile::preset(SIM_IV).unwrap();
    file.system.sensors = 1;
    file.system.h_bar = vec![MatrixSeries::Constant(vec![
        vec![1.0, 0.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0, 0.0],
    ])];
    file.noise.measurement_bounds = vec![MatrixSeries::Constant(diag(2, 90.0))];
    file.noise.measurement_covariances = vec![diag(2, 90.0)];
    file.topology.adjacency = vec![vec![vec![1.0]]];
    file.topology.switching = SwitchingSignal::Blocks(vec![Block { graph: 0, steps: 1 }]);
    let report = cmd_check(&file.validate().unwrap()).unwrap();
    assert!(report.connected);
}

#[test]
fn one_run_one_step_writes_one_row_per_sensor() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = preset_args();
    args.runs = Some(1);
    args.horizon = Some(1);
    let summary = cmd_run(&load(&args).unwrap(), dir.path(), 1).unwrap();
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "k,sensor,mse,trace_p,mse_avg,trace_avg");
    assert_eq!(lines.len(), 5);
    assert!(lines[1..].iter().all(|l| l.starts_with("1,")));
    assert_eq!(fs::read_to_string(dir.path().join("summary.txt")).unwrap(), summary);
    assert!(summary.contains("consistency violations"));
}

#[test]
fn trace_with_zero_horizon_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = preset_args();
    args.horizon = Some(0);
    let path = cmd_trace(&load(&args).unwrap(), 0, dir.path()).unwrap();
    let text = fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("k,x_true_1,x_true_2,x_true_3,x_true_4,x_true_5,x_true_6,xhat_1_1,"));
}

#[test]
fn noiseless_trace_has_zero_errors() {
    let mut file = ScenarioFile::preset(SIM_IV).unwrap();
    file.noise.process_covariance = diag(4, 0.0);
    file.noise.initial_covariance = diag(4, 0.0);
    file.noise.measurement_covariances = vec![vec![vec![0.0]]; 4];
    file.noise.increment_bounds = VectorSeries::Constant(vec![16.0, 16.0]);
    file.filter.initial_covariance = diag(6, 1e-9);
    file.experiment.horizon = 40;
    let dir = tempfile::tempdir().unwrap();
    let path = cmd_trace(&file.validate().unwrap(), 0, dir.path()).unwrap();
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let err_cols: Vec<usize> = (0..header.len()).filter(|&c| header[c].starts_with("err_")).collect();
    assert_eq!(err_cols.len(), 24);
    for line in lines {
        let fields: Vec<f64> = line.split(',').map(|f| f.parse().unwrap()).collect();
        for &c in &err_cols {
            assert!(fields[c].abs() < 1e-6, "{} = {}", header[c], fields[c]);
        }
    }
}

#[test]
fn exit_codes() {
    let ok = bin().args(["check", "--preset", "sim-iv"]).output().unwrap();
    assert!(ok.status.success());
    assert!(String::from_utf8_lossy(&ok.stdout).contains("collective observability: holds"));

    let blocker = tempfile::NamedTempFile::new().unwrap();
    let out = blocker.path().join("sub");
    let io = bin()
        .args(["run", "--preset", "sim-iv", "--runs", "1", "--horizon", "2", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(io.status.code(), Some(5));

    let bad_theta = bin().args(["check", "--preset", "sim-iv", "--theta", "-1"]).output().unwrap();
    assert_eq!(bad_theta.status.code(), Some(3));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let mut file = ScenarioFile::preset(SIM_IV).unwrap();
    file.system.a_bar = MatrixSeries::Constant(vec![vec![1.0; 4]; 3]);
    fs::write(&path, file.to_json()).unwrap();
    let dims = bin().args(["check", "--scenario"]).arg(&path).output().unwrap();
    assert_eq!(dims.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&dims.stderr).contains("system.a_bar"));

    fs::write(&path, "{ \"system\": ").unwrap();
    let parse = bin().args(["check", "--scenario"]).arg(&path).output().unwrap();
    assert_eq!(parse.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&parse.stderr).contains("line 1"));

    let missing = bin().args(["check", "--scenario", "/nonexistent/x.json"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(5));
}

#[test]
fn scenario_file_round_trips_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    fs::write(&path, ScenarioFile::preset(SIM_IV).unwrap().to_json()).unwrap();
    let mut args = preset_args();
    args.preset = None;
    args.scenario = Some(path);
    assert_eq!(load(&args).unwrap(), load(&preset_args()).unwrap());
}
