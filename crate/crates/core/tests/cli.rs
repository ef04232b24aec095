//! End-to-end runs of the `thicken` binary.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("thicken-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn thicken(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_thicken"))
        .args(args)
        .output()
        .expect("binary runs")
        .status
        .code()
        .expect("binary exits normally")
}

fn run(command: &str, config_name: &str, out: &Path, extra: &[&str]) -> i32 {
    let cfg = config(config_name);
    let mut args = vec![
        command,
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    thicken(&args)
}

fn manifest(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

fn files_under(root: &Path) -> BTreeSet<String> {
    let mut found = BTreeSet::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                found.insert(path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/"));
            }
        }
    }
    found
}

/// Rows of a CSV as maps from header to cell.
fn csv_rows(path: &Path) -> Vec<std::collections::HashMap<String, String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    lines
        .map(|l| header.iter().cloned().zip(l.split(',').map(String::from)).collect())
        .collect()
}

#[test]
fn all_stages_pass_on_quartic_and_artifacts_are_deterministic() {
    let a = scratch("all-a");
    let b = scratch("all-b");
    assert_eq!(run("all", "quartic.json", &a, &["--threads", "1"]), 0);
    assert_eq!(run("all", "quartic.json", &b, &["--threads", "2"]), 0);

    let m = manifest(&a);
    assert_eq!(m["exit_code"], 0);
    let statuses = m["stage_statuses"].as_object().unwrap();
    assert_eq!(statuses.len(), 6);
    assert!(statuses.values().all(|s| s["status"] == "pass"), "{statuses:?}");

    let listed: BTreeSet<String> = m["artifact_paths"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p.as_str().unwrap().to_string())
        .collect();
    assert_eq!(listed, files_under(&a));
    let csvs: Vec<&String> = listed.iter().filter(|p| p.ends_with(".csv")).collect();
    assert!(csvs.len() >= 6);
    for rel in csvs {
        assert_eq!(
            fs::read(a.join(rel)).unwrap(),
            fs::read(b.join(rel)).unwrap(),
            "{rel} differs between runs"
        );
    }
    assert_eq!(m["config_hash"], manifest(&b)["config_hash"]);
    let _ = fs::remove_dir_all(&a);
    let _ = fs::remove_dir_all(&b);
}

#[test]
fn quadratic_lambda_gaps_have_closed_form() {
    let out = scratch("quadratic-lambda");
    assert_eq!(run("lambda", "quadratic.json", &out, &[]), 0);
    // With h = 0 the finite-horizon graph is the constant z- e^{-T} while
    // the stable graph vanishes.
    let rows = csv_rows(&out.join("c0.csv"));
    assert!(!rows.is_empty());
    for r in rows {
        let t: f64 = r["T"].parse().unwrap();
        let zm: f64 = r["zm_1"].parse::<f64>().unwrap().hypot(r["zm_2"].parse().unwrap());
        let gap: f64 = r["gap"].parse().unwrap();
        let exact = zm * (-t).exp();
        assert!(
            (gap - exact).abs() <= 1e-9 * exact,
            "T = {t}: gap {gap} against {exact}"
        );
    }
    for r in csv_rows(&out.join("boundary.csv")) {
        assert!(r["gap"].parse::<f64>().unwrap() <= 1e-12);
    }
    let _ = fs::remove_dir_all(&out);
}

#[test]
fn ladder_echoes_requested_constants() {
    let out = scratch("ladder");
    assert_eq!(run("ladder", "quadratic_ladder.json", &out, &[]), 0);
    let echo = &manifest(&out)["ladder_echo"];
    assert_eq!(echo["lambda"], 0.5);
    assert_eq!(echo["varkappa"], 0.1);
    let t1 = echo["T1"].as_f64().unwrap();
    assert!((t1 - 10f64.ln() / 0.5).abs() <= 1e-15 * t1);
    assert!(manifest(&out)["ladder_checks"]
        .as_object()
        .unwrap()
        .values()
        .all(|v| v == true));
    let _ = fs::remove_dir_all(&out);
}

#[test]
fn stage_flag_stops_the_pipeline() {
    let out = scratch("stage");
    assert_eq!(run("all", "quartic.json", &out, &["--stage", "ladder"]), 0);
    let statuses = manifest(&out)["stage_statuses"].as_object().unwrap().clone();
    let names: Vec<&String> = statuses.keys().collect();
    assert_eq!(names, ["ladder", "spectral"]);
    let _ = fs::remove_dir_all(&out);
}

#[test]
fn configuration_errors_exit_with_code_three() {
    let out = scratch("bad-config");
    fs::create_dir_all(&out).unwrap();
    let bad = out.join("bad.json");
    fs::write(
        &bad,
        r#"{"name": "x", "dimension": 2, "critical_point": [0, 0], "objective": [], "colour": 1}"#,
    )
    .unwrap();
    let args = [
        "spectral",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    assert_eq!(thicken(&args), 3);
    let record: Value = serde_json::from_str(&fs::read_to_string(out.join("error.json")).unwrap()).unwrap();
    assert_eq!(record["category"], "configuration");
    assert_eq!(record["exit_code"], 3);

    let missing = out.join("missing.json");
    assert_eq!(
        thicken(&[
            "spectral",
            "--config",
            missing.to_str().unwrap(),
            "--out",
            out.to_str().unwrap()
        ]),
        3
    );
    assert_eq!(
        thicken(&["spectral", "--config", bad.to_str().unwrap(), "--tol", "-1"]),
        3
    );
    assert_eq!(thicken(&["no-such-command"]), 3);
    let _ = fs::remove_dir_all(&out);
}

#[test]
fn non_adapted_coordinates_fail_the_endpoint_audit() {
    let out = scratch("curved");
    assert_eq!(run("lambda", "curved.json", &out, &[]), 2);
    let m = manifest(&out);
    assert_eq!(m["stage_statuses"]["lambda"]["status"], "fail");
    assert!(csv_rows(&out.join("endpoint.csv")).iter().any(|r| r["pass"] == "false"));
    let _ = fs::remove_dir_all(&out);
}
