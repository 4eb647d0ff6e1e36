use std::fs;
use std::path::Path;

use picardnet::cli::{run, EXIT_CHECK, EXIT_CONFIG, EXIT_GUARD, EXIT_OK};

fn invoke(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("picardnet").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn solve_is_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"problem": "bs-like", "dim": 2, "n": 2, "M": 2, "seed": 5,
            "probes": [{"t": 0.0, "x": [0.1, 0.2]}, {"t": 0.5, "x": [1.0, -1.0]}]}"#,
    );
    let (a_dir, b_dir) = (dir.path().join("a"), dir.path().join("b"));
    let (c1, _, e1) = invoke(&["solve", "--config", &cfg, "--out", a_dir.to_str().unwrap(), "--threads", "1"]);
    let (c2, _, _) = invoke(&["solve", "--config", &cfg, "--out", b_dir.to_str().unwrap(), "--threads", "4"]);
    assert_eq!((c1, c2), (EXIT_OK, EXIT_OK), "{e1}");
    let a = fs::read(a_dir.join("solve.csv")).unwrap();
    assert_eq!(a, fs::read(b_dir.join("solve.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,M,t,x0,x1,estimate,seed");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].ends_with(",5"));
}

#[test]
fn seed_flag_overrides_and_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"problem": "heat", "dim": 1, "n": 1, "M": 2, "probes": [{"t": 0.0, "x": [0.0]}]}"#,
    );
    let (_, a, _) = invoke(&["solve", "--config", &cfg]);
    let (_, b, _) = invoke(&["solve", "--config", &cfg, "--seed", "9"]);
    assert!(a.starts_with("# solve.csv\n"));
    assert_ne!(a, b);
    assert!(b.lines().nth(2).unwrap().ends_with(",9"));
}

#[test]
fn empty_probes_give_a_header_only_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"problem": "heat", "dim": 3, "n": 1, "M": 1}"#);
    let (code, out, _) = invoke(&["solve", "--config", &cfg]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out, "# solve.csv\nn,M,t,x0,x1,x2,estimate,seed\n");
}

#[test]
fn configuration_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_config(dir.path(), "u.json", r#"{"problem": "wave", "n": 1, "M": 1}"#);
    let (code, _, err) = invoke(&["solve", "--config", &unknown]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("wave"), "{err}");
    let bad_probe = write_config(dir.path(), "p.json", r#"{"problem": "heat", "dim": 2, "probes": [{"t": 0, "x": [1]}]}"#);
    assert_eq!(invoke(&["solve", "--config", &bad_probe]).0, EXIT_CONFIG);
    assert_eq!(invoke(&["solve"]).0, EXIT_CONFIG);
    assert_eq!(invoke(&["frobnicate"]).0, EXIT_CONFIG);
    let missing = dir.path().join("none.json");
    assert_eq!(invoke(&["solve", "--config", missing.to_str().unwrap()]).0, EXIT_CONFIG);
    let ok = write_config(dir.path(), "ok.json", r#"{"problem": "heat", "n": 1, "M": 1}"#);
    assert_eq!(invoke(&["solve", "--config", &ok, "--threads", "0"]).0, EXIT_CONFIG);
}

#[test]
fn guards_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let big = write_config(dir.path(), "b.json", r#"{"problem": "heat", "n": 6, "M": 6, "probes": [{"t": 0, "x": [0]}]}"#);
    let (code, _, err) = invoke(&["solve", "--config", &big]);
    assert_eq!(code, EXIT_GUARD, "{err}");
    let tight = write_config(
        dir.path(),
        "t.json",
        r#"{"problem": "relu-exact", "dim": 2, "n": 2, "M": 2, "build": {"param_limit": 10}}"#,
    );
    assert_eq!(invoke(&["build-verify", "--config", &tight]).0, EXIT_GUARD);
}

#[test]
fn build_verify_reports_pass() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"problem": "relu-exact", "dim": 2, "levels": [[0, 1], [1, 1], [2, 2]], "seed": 3,
            "build": {"write_networks": true}}"#,
    );
    let out = dir.path().join("out");
    let (code, _, err) = invoke(&["build-verify", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("build_report.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert_eq!(r["depth"], r["predicted_depth"]);
        assert!(r["max_relative_deviation"].as_f64().unwrap() <= 1e-8);
    }
    let nets = fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().extension() == Some("json".as_ref()));
    assert!(nets.count() > 1);
}

#[test]
fn build_verify_alias_and_check_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"problem": "relu-exact", "n": 1, "M": 1, "build": {"tolerance": -1.0}}"#,
    );
    let (code, _, err) = invoke(&["verify", "--config", &cfg]);
    assert_eq!(code, EXIT_CHECK);
    assert!(err.contains("check failed"));
}

#[test]
fn sweep_writes_every_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"problem": "heat", "dim": 1, "levels": [[1, 1], [2, 2]], "grid": {"uniform": 4},
            "probes": [{"t": 0.0, "x": [0.5]}],
            "sweep": {
                "fullerror": {"seeds": 10},
                "growth": {"dims": [1, 2], "eps": [0.5, 0.25]},
                "lyapunov": {"paths": 500, "steps": 2},
                "perturbation": {"paths": 500}
            }}"#,
    );
    let out = dir.path().join("o");
    let (code, _, err) = invoke(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    let growth = fs::read_to_string(out.join("growth.csv")).unwrap();
    let mut lines = growth.lines();
    let header = lines.next().unwrap();
    assert!(header.contains("eta_d") && header.contains("eta_eps"), "{header}");
    assert_eq!(lines.count(), 4);
    let fe = fs::read_to_string(out.join("fullerror.csv")).unwrap();
    assert_eq!(fe.lines().count(), 3);
    for f in ["lyapunov.csv", "perturbation.csv"] {
        assert!(fs::read_to_string(out.join(f)).unwrap().lines().count() > 1);
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 5);
}

#[test]
fn threads_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"problem": "ode-exp", "n": 2, "M": 2, "probes": [{"t": 0.0, "x": [0.0]}]}"#,
    );
    let (_, plain, _) = invoke(&["solve", "--config", &cfg]);
    std::env::set_var("PICARDNET_THREADS", "2");
    let (code, env, _) = invoke(&["solve", "--config", &cfg]);
    std::env::remove_var("PICARDNET_THREADS");
    assert_eq!(code, EXIT_OK);
    assert_eq!(plain, env);
}

#[test]
fn sweep_with_failing_check_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"problem": "heat", "sweep": {"growth": {"dims": [1], "eps": [0.5],
            "mode": {"mode": "literal", "search_cap": 100000}}}}"#,
    );
    let (code, out, err) = invoke(&["sweep", "--config", &cfg]);
    assert_eq!(code, EXIT_CHECK, "{err}");
    assert!(out.contains("skipped: "));
    assert!(out.contains("\"pass\": false"));
}
