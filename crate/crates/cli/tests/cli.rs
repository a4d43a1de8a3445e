//! End-to-end tests of the `motenv` binary: exit codes, file outputs,
//! reproducibility.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn motenv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_motenv"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn spread_config(dir: &Path, out: &Path) -> String {
    write_config(
        dir,
        &format!(
            r#"{{
                "atoms": [-1.0, 0.0, 1.0],
                "payoff": {{"type": "call_spread", "k1": -0.1, "k2": 0.5}},
                "initial": {{"weights": [0.5, 0.2, 0.3]}},
                "m": 30,
                "method": "both",
                "mc": {{"n_paths": 2000, "dt": 0.001, "master_seed": 7}},
                "output_dir": "{}"
            }}"#,
            out.display()
        ),
    )
}

#[test]
fn oracle_prints_value_and_strategy() {
    let out = motenv(&[
        "oracle", "--k1", "-0.1", "--k2", "0.5", "--beta", "0.2", "--gamma", "0.3",
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["value"].as_f64().unwrap() - 0.32).abs() < 1e-12);
    assert_eq!(v["strategy"]["case"], "split_against_bottom");
}

#[test]
fn oracle_surface_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("surface.csv");
    let out = motenv(&[
        "oracle",
        "--k1",
        "-0.1",
        "--k2",
        "0.5",
        "--grid",
        "20",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(lines.next().unwrap(), "beta,gamma,fbar,value");
    // triangular grid of (beta, gamma) with beta + gamma <= 1
    assert_eq!(lines.count(), 21 * 22 / 2);
    // a known surface point: beta = 0.2, gamma = 0.3
    let row = text
        .lines()
        .find(|l| l.starts_with("0.2,0.3,"))
        .expect("row present");
    assert!(row.ends_with(",0.32"));
}

#[test]
fn solve_writes_csvs_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let cfg = spread_config(tmp.path(), &out_dir);
    let out = motenv(&["solve", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("solve_summary.json")).unwrap())
            .unwrap();
    assert!(summary["agreement"]["max_abs_diff"].as_f64().unwrap() < 5e-3);
    for method in ["hull", "obstacle"] {
        let csv = out_dir.join(format!("{method}_face_0-1-2.csv"));
        let text = fs::read_to_string(csv).unwrap();
        assert!(text.starts_with("# config:"));
        assert!(text.contains("w0,w1,w2,fbar,value,contact"));
        // binomial(32, 2) nodes
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count() - 1, 496);
    }
    // no stray temp files
    assert!(fs::read_dir(&out_dir)
        .unwrap()
        .all(|e| !e.unwrap().path().to_string_lossy().ends_with(".tmp")));
}

#[test]
fn simulate_is_reproducible_and_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let cfg = spread_config(tmp.path(), &out_dir);
    let run = |extra: &[&str]| {
        let mut args = vec!["simulate", "--config", &cfg, "--method", "hull"];
        args.extend_from_slice(extra);
        let out = motenv(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read_to_string(out_dir.join("simulate.json")).unwrap()
    };
    let a = run(&[]);
    let b = run(&[]);
    assert_eq!(a, b, "same seed must give identical output");
    let c = run(&["--seed", "8"]);
    assert_ne!(a, c, "different seed must change the estimate");
    let va: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert!(va["estimate"]["mean"].as_f64().unwrap() > 0.0);
    assert_eq!(va["config"]["mc"]["master_seed"].as_u64().unwrap(), 7);

    run(&["--trace", "3", "--n-paths", "500"]);
    let trace = fs::read_to_string(out_dir.join("traces.csv")).unwrap();
    let mut lines = trace.lines().filter(|l| !l.starts_with('#'));
    // (header first, then step rows)
    assert_eq!(lines.next().unwrap(), "path_id,stage,r,w0,w1,w2,stopped");
    assert!(lines.clone().count() > 3);
    // final row of each path is flagged stopped
    let last = lines.next_back().unwrap();
    assert!(last.ends_with(",1"));
}

#[test]
fn compare_passes_on_the_spread() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let cfg = spread_config(tmp.path(), &out_dir);
    let out = motenv(&["compare", "--config", &cfg]);
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("compare.json")).unwrap()).unwrap();
    assert_eq!(report["pass"]["all"], true);
    // strategy dumps carry the exit data
    let rows = report["rows"].as_array().unwrap();
    let first = &rows[0]["strategy"];
    assert!(first["p_hit_z1"].is_number() || first["stop"] == true);
}

#[test]
fn compare_handles_put_plus_payoffs() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let cfg = write_config(
        tmp.path(),
        &format!(
            r#"{{
                "atoms": [-1.0, 0.0, 1.0],
                "payoff": {{"type": "put_plus", "g_points": [[-1.0, -0.5], [0.0, 0.6], [1.0, -0.7]]}},
                "initial": {{"weights": [0.5, 0.2, 0.3]}},
                "m": 40,
                "method": "both",
                "mc": {{"n_paths": 3000, "dt": 0.001, "master_seed": 5}},
                "output_dir": "{}"
            }}"#,
            out_dir.display()
        ),
    );
    let out = motenv(&["compare", "--config", &cfg]);
    assert!(
        out.status.success(),
        "stdout: {}",
        String::from_utf8_lossy(&out.stdout)
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("compare.json")).unwrap()).unwrap();
    assert_eq!(report["pass"]["all"], true);
    // no closed form for this payoff
    assert!(report["max_oracle_diff"].is_null());
}

#[test]
fn compare_exits_5_when_a_tolerance_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let cfg = write_config(
        tmp.path(),
        &format!(
            r#"{{
                "atoms": [-1.0, 0.0, 1.0],
                "payoff": {{"type": "call_spread", "k1": -0.1, "k2": 0.5}},
                "initial": {{"weights": [0.5, 0.2, 0.3]}},
                "m": 20,
                "method": "both",
                "mc": {{"n_paths": 500, "dt": 0.001, "master_seed": 5}},
                "compare": {{"hull_obstacle_tol": 1e-15, "oracle_tol": 2e-2,
                             "mc_sigmas": 3.0, "mc_slack": 1e-3, "n_paths": 500}},
                "output_dir": "{}"
            }}"#,
            out_dir.display()
        ),
    );
    let out = motenv(&["compare", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(5));
    // the report is still written, with the verdict recorded
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("compare.json")).unwrap()).unwrap();
    assert_eq!(report["pass"]["all"], false);
    assert_eq!(report["pass"]["hull_obstacle"], false);
}

#[test]
fn schema_violations_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    // unknown field
    let cfg = write_config(
        tmp.path(),
        r#"{"atoms": [0.0, 1.0], "payoff": {"type": "call_spread", "k1": 0.1, "k2": 0.5},
            "initial": {"weights": [0.5, 0.5]}, "m": 10, "bogus": true}"#,
    );
    let out = motenv(&["solve", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    // invalid weights
    let cfg = write_config(
        tmp.path(),
        r#"{"atoms": [0.0, 1.0], "payoff": {"type": "call_spread", "k1": 0.1, "k2": 0.5},
            "initial": {"weights": [0.7, 0.7]}, "m": 10}"#,
    );
    let out = motenv(&["solve", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    // atoms not increasing
    let cfg = write_config(
        tmp.path(),
        r#"{"atoms": [1.0, 0.0], "payoff": {"type": "call_spread", "k1": 0.1, "k2": 0.5},
            "initial": {"weights": [0.5, 0.5]}, "m": 10}"#,
    );
    let out = motenv(&["solve", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    // missing file
    let out = motenv(&["solve", "--config", "/nonexistent/nope.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn single_atom_solves_to_the_cost_value() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let cfg = write_config(
        tmp.path(),
        &format!(
            r#"{{
                "atoms": [0.25],
                "payoff": {{"type": "pwl", "points": [[0.0, 0.1], [1.0, 0.9]]}},
                "initial": {{"weights": [1.0]}},
                "m": 10,
                "method": "hull",
                "output_dir": "{}"
            }}"#,
            out_dir.display()
        ),
    );
    let out = motenv(&["solve", "--config", &cfg]);
    assert!(out.status.success());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("solve_summary.json")).unwrap())
            .unwrap();
    let v = summary["methods"][0]["value_at_initial"].as_f64().unwrap();
    assert!((v - 0.3).abs() < 1e-12, "f(0.25) = 0.3, got {v}");
}
