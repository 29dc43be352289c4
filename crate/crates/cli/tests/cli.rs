use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn mas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mas"))
        .args(args)
        .env_remove("LLM_BASE_URL")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_a_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let traces = dir.path().join("traces");
    let scenario = fixtures().join("two_step.json");
    let o = mas(&[
        "run",
        path(&scenario),
        "--trials",
        "5",
        "--seed",
        "3",
        "--out",
        path(&out),
        "--trace-dir",
        path(&traces),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("- Success Rate"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["n_trials"], 5);
    assert_eq!(report["success_rate"], 1.0);
    assert_eq!(report["metadata"]["master_seed"], 3);
    assert_eq!(std::fs::read_dir(&traces).unwrap().count(), 5);
}

#[test]
fn faulted_run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let profile = dir.path().join("profile.json");
    std::fs::write(
        &profile,
        r#"{"p_wrong_function": 0.1, "p_wrong_gcode": 0.1, "p_no_execution": 0.1, "seed": 4}"#,
    )
    .unwrap();
    let scenario = fixtures().join("four_step.json");
    let args = |workers: &'static str| {
        mas(&[
            "run",
            path(&scenario),
            "--backend",
            "faulted",
            "--fault-profile",
            path(&profile),
            "--trials",
            "40",
            "--workers",
            workers,
            "--format",
            "json",
        ])
    };
    let a = args("1");
    let b = args("3");
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(stdout(&a), stdout(&b));
    let report: serde_json::Value = serde_json::from_str(&stdout(&a)).unwrap();
    assert!(report["failures"].as_u64().unwrap() > 0);
    assert_eq!(report["metadata"]["backend"], "faulted");
}

#[test]
fn scripted_replay_from_the_command_line() {
    let o = mas(&[
        "run",
        path(&fixtures().join("two_step.json")),
        "--backend",
        "scripted",
        "--script",
        path(&fixtures().join("two_step_transcript.jsonl")),
        "--trials",
        "1",
        "--format",
        "json",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["successes"], 1);
}

#[test]
fn faulted_backend_needs_a_profile() {
    let o = mas(&["run", path(&fixtures().join("two_step.json")), "--backend", "faulted"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--fault-profile"));
}

#[test]
fn validate_reports_the_scenario() {
    let o = mas(&["validate", path(&fixtures().join("four_step.json"))]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("tools T4 T2 T6 T8"));
    let o = mas(&["validate", path(&fixtures().join("missing.json"))]);
    assert!(!o.status.success());
}

#[test]
fn strict_functions_rejects_unknown_names() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixtures().join("two_step.json"))
        .unwrap()
        .replace(
            "\"query_history\",\n          \"proceed_to_exit_buffer\"",
            "\"query_history\",\n          \"teleport\",\n          \"proceed_to_exit_buffer\"",
        )
        .replace("programs/two_step.nc", path(&fixtures().join("programs/two_step.nc")));
    assert!(text.contains("teleport"));
    let scenario = dir.path().join("s.json");
    std::fs::write(&scenario, text).unwrap();
    assert!(mas(&["validate", path(&scenario)]).status.success());
    let o = mas(&["validate", path(&scenario), "--strict-functions"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("teleport"));
}

#[test]
fn gcode_tools_and_split() {
    let program = fixtures().join("programs/four_step.nc");
    let o = mas(&["gcode", "tools", path(&program)]);
    assert_eq!(stdout(&o), "T4\nT2\nT6\nT8\n");
    let o = mas(&["gcode", "split", path(&program), "--tool", "2"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("T2 M06"));
    assert!(!stdout(&o).contains("T4"));
    let o = mas(&["gcode", "split", path(&program), "--tool", "9"]);
    assert!(!o.status.success());
}

#[test]
fn gcode_check_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let program = fixtures().join("programs/four_step.nc");
    let section = stdout(&mas(&["gcode", "split", path(&program), "--tool", "4"]));
    let exact = dir.path().join("exact.nc");
    std::fs::write(&exact, &section).unwrap();
    let o = mas(&[
        "gcode",
        "check",
        path(&program),
        "--tool",
        "4",
        "--candidate",
        path(&exact),
    ]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "Exact");

    let mut lines: Vec<&str> = section.lines().collect();
    lines.reverse();
    let shuffled = dir.path().join("shuffled.nc");
    std::fs::write(&shuffled, lines.join("\n")).unwrap();
    let o = mas(&[
        "gcode",
        "check",
        path(&program),
        "--tool",
        "4",
        "--candidate",
        path(&shuffled),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stdout(&o).trim(), "EquivalentBlocks");

    let o = mas(&[
        "gcode",
        "check",
        path(&program),
        "--tool",
        "2",
        "--candidate",
        path(&exact),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stdout(&o).trim(), "WrongSegment");
}
