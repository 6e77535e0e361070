//! End-to-end runs of the binary against the shipped scenario. Exit code
//! contract: 0 all certificates hold, 2 at least one fails (report still
//! written), 1 malformed input.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scenario_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/cruise_control.json")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_passlab"))
        .args(args)
        .output()
        .expect("binary failed to launch")
}

fn run_command(cmd: &str, scenario: &Path, out: &Path) -> (i32, Value) {
    let output = run(&[
        cmd,
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let code = output.status.code().expect("killed by signal");
    let report: Value = serde_json::from_str(
        &fs::read_to_string(out.join("report.json")).expect("report.json missing"),
    )
    .expect("report.json is not valid JSON");
    (code, report)
}

fn certificate<'a>(report: &'a Value, name: &str) -> &'a Value {
    report["certificates"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == name)
        .unwrap_or_else(|| panic!("no certificate named {name}"))
}

fn failing_names(report: &Value) -> Vec<String> {
    report["certificates"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["holds"] == false)
        .map(|c| c["name"].as_str().unwrap().to_string())
        .collect()
}

#[test]
fn verify_passes_on_shipped_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let (code, report) = run_command("verify", &scenario_path(), dir.path());
    assert_eq!(code, 0);
    assert_eq!(report["schema"], "passlab/report-v1");
    assert_eq!(report["certificates"].as_array().unwrap().len(), 6);
    assert!(failing_names(&report).is_empty());
    let det = certificate(&report, "loop_detectability");
    assert!(det["details"]["kappa_autonomous"].as_f64().unwrap() > 0.0);
}

#[test]
fn abstract_flags_infeasible_precision_but_builds_soundly() {
    let dir = tempfile::tempdir().unwrap();
    let (code, report) = run_command("abstract", &scenario_path(), dir.path());
    assert_eq!(code, 2);
    assert_eq!(failing_names(&report), vec!["abstraction_feasibility"]);
    let feas = certificate(&report, "abstraction_feasibility");
    assert!(feas["margin"].as_f64().unwrap() < 0.0);
    assert_eq!(certificate(&report, "abstraction_build")["holds"], true);
    assert_eq!(certificate(&report, "abstraction_trace_check")["holds"], true);

    let ts = fs::read_to_string(dir.path().join("abstraction_ts.csv")).unwrap();
    let mut lines = ts.lines();
    assert_eq!(lines.next(), Some("src,label,dst,output"));
    assert!(lines.count() > 1000);
}

#[test]
fn degrade_passes_on_shipped_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let (code, report) = run_command("degrade", &scenario_path(), dir.path());
    assert_eq!(code, 0);
    assert!(failing_names(&report).is_empty());
}

#[test]
fn closedloop_passes_and_sweeps_the_feasible_region() {
    let dir = tempfile::tempdir().unwrap();
    let (code, report) = run_command("closedloop", &scenario_path(), dir.path());
    assert_eq!(code, 0);
    assert!(failing_names(&report).is_empty());
    let decay = certificate(&report, "zero_input_decay");
    assert!(decay["margin"].as_f64().unwrap() > 0.0);

    let sweep = fs::read_to_string(dir.path().join("feasible_region.csv")).unwrap();
    let mut lines = sweep.lines();
    assert_eq!(lines.next(), Some("nu_c,rho_c,margin_block1,margin_block2"));
    assert!(lines.count() >= 100);
}

#[test]
fn simulate_passes_and_writes_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let (code, report) = run_command("simulate", &scenario_path(), dir.path());
    assert_eq!(code, 0);
    assert!(failing_names(&report).is_empty());

    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(
        lines.next(),
        Some("k,t,x1_0,u1_0,y1_0,xc_0,xc_1,uc_0,yc_0,V,residual")
    );
    assert_eq!(lines.count(), 501);
}

#[test]
fn bound_uses_the_output_decay_route_on_the_shipped_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let (code, report) = run_command("bound", &scenario_path(), dir.path());
    assert_eq!(code, 0);
    let cert = certificate(&report, "ultimate_bound");
    assert_eq!(cert["details"]["path"], "output_decay");
    assert!(cert["details"]["d"].as_f64().unwrap().is_finite());
}

#[test]
fn report_aggregates_every_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let (code, report) = run_command("report", &scenario_path(), dir.path());
    assert_eq!(code, 2);
    assert_eq!(report["certificates"].as_array().unwrap().len(), 17);
    assert_eq!(failing_names(&report), vec!["abstraction_feasibility"]);
}

#[test]
fn forcing_an_output_index_above_the_feasible_bound_fails() {
    let dir = tempfile::tempdir().unwrap();
    let output = run(&[
        "closedloop",
        "--scenario",
        scenario_path().to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--rho-c",
        "0.4",
    ]);
    assert_eq!(output.status.code(), Some(2));
    let report: Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("report.json")).unwrap(),
    )
    .unwrap();
    let pair = certificate(&report, "closed_loop_feasible_pair");
    assert_eq!(pair["holds"], false);
    assert_eq!(pair["details"]["forced"], true);
    assert!(pair["margin"].as_f64().unwrap() < 0.0);
}

#[test]
fn zero_period_and_pitch_echo_the_continuous_indices() {
    let dir = tempfile::tempdir().unwrap();
    let mut scenario: Value =
        serde_json::from_str(&fs::read_to_string(scenario_path()).unwrap()).unwrap();
    scenario["abstraction"]["tau"] = 0.0.into();
    scenario["abstraction"]["mu"] = 0.0.into();
    scenario["free_params"]["lambda4"] = 1.0.into();
    let path = dir.path().join("echo.json");
    fs::write(&path, serde_json::to_string(&scenario).unwrap()).unwrap();

    let (code, report) = run_command("degrade", &path, dir.path());
    assert_eq!(code, 0);
    let plant = certificate(&report, "plant_sampled_indices");
    assert_eq!(plant["details"]["nu"].as_f64().unwrap(), 0.0);
    assert_eq!(plant["details"]["rho"].as_f64().unwrap(), 0.01);
    let ctrl = certificate(&report, "controller_symbolic_indices");
    assert_eq!(ctrl["details"]["nu"].as_f64().unwrap(), 0.31);
    assert_eq!(ctrl["details"]["rho"].as_f64().unwrap(), 0.42);
}

#[test]
fn reports_are_reproducible_for_a_fixed_seed() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let (code_a, _) = run_command("verify", &scenario_path(), dir_a.path());
    let (code_b, _) = run_command("verify", &scenario_path(), dir_b.path());
    assert_eq!(code_a, 0);
    assert_eq!(code_b, 0);
    let bytes_a = fs::read(dir_a.path().join("report.json")).unwrap();
    let bytes_b = fs::read(dir_b.path().join("report.json")).unwrap();
    assert_eq!(bytes_a, bytes_b);
}

#[test]
fn malformed_input_exits_with_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap().to_string();

    let missing = run(&["verify", "--scenario", "/nonexistent.json", "--out", &out]);
    assert_eq!(missing.status.code(), Some(1));

    let garbled = dir.path().join("garbled.json");
    fs::write(&garbled, "{ not json").unwrap();
    let bad = run(&["verify", "--scenario", garbled.to_str().unwrap(), "--out", &out]);
    assert_eq!(bad.status.code(), Some(1));

    let mut scenario: Value =
        serde_json::from_str(&fs::read_to_string(scenario_path()).unwrap()).unwrap();
    scenario["surprise"] = 1.into();
    let unknown = dir.path().join("unknown.json");
    fs::write(&unknown, serde_json::to_string(&scenario).unwrap()).unwrap();
    let unk = run(&["verify", "--scenario", unknown.to_str().unwrap(), "--out", &out]);
    assert_eq!(unk.status.code(), Some(1));

    let mut scenario: Value =
        serde_json::from_str(&fs::read_to_string(scenario_path()).unwrap()).unwrap();
    scenario["simulation"]["x1_initial"] = serde_json::json!([1.0, 2.0]);
    let mismatched = dir.path().join("mismatched.json");
    fs::write(&mismatched, serde_json::to_string(&scenario).unwrap()).unwrap();
    let dim = run(&[
        "verify",
        "--scenario",
        mismatched.to_str().unwrap(),
        "--out",
        &out,
    ]);
    assert_eq!(dim.status.code(), Some(1));
}
