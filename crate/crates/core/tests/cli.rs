//! End-to-end runs of the `warpgeo` binary on the bundled scenarios.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.scenario"))
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden").join(name)
}

fn warpgeo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_warpgeo")).args(args).output().unwrap()
}

fn run(name: &str, out: &Path, extra: &[&str]) -> Output {
    let s = scenario(name);
    let mut args = vec!["run", s.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    warpgeo(&args)
}

fn report(dir: &Path, prefix: &str) -> Value {
    let text = fs::read_to_string(dir.join(format!("{prefix}_report.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn without_timestamp(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timestamp");
    v
}

fn check<'a>(rep: &'a Value, name: &str) -> &'a Value {
    rep["checks"].as_array().unwrap().iter().find(|c| c["name"] == name).unwrap()
}

#[test]
fn sphere_clairaut_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("sphere_clairaut", dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let rep = report(dir.path(), "sphere_clairaut");
    let c = check(&rep, "clairaut");
    assert_eq!(c["status"], "pass");
    assert!(c["details"]["max_drift"].as_f64().unwrap() <= 1e-4);
    assert!(c["details"]["max_turning"].as_f64().unwrap() <= 1e-3);
    assert_eq!(rep["traces"].as_array().unwrap().len(), 10);
}

#[test]
fn negative_control_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("negative_control", dir.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
    let rep = report(dir.path(), "negative_control");
    let c = check(&rep, "clairaut");
    assert_eq!(c["status"], "fail");
    assert_eq!(c["details"]["verdict"], false);
    assert!(c["details"]["max_drift"].as_f64().unwrap() > 1e-4);
    assert_eq!(rep["passed"], false);
}

#[test]
fn unknown_manifold_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("flat", dir.path(), &["--set", "warped_product.base=\"klein_bottle\""]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("warped_product.base"), "{err}");
    assert!(!dir.path().join("flat_report.json").exists());
}

#[test]
fn malformed_files_exit_two_with_a_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.scenario");
    fs::write(&bad, "name = \"bad\"\nmanifold = line\nchecks = [\"geodesic-speed\"]\nlaunch { point = [0], velocity = [1], colour = 3 }\n").unwrap();
    let out = warpgeo(&["run", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4"), "{err}");

    fs::write(&bad, "manifold = line\nchecks = [\"no-such-check\"]\n").unwrap();
    let out = warpgeo(&["run", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runs_are_deterministic() {
    for name in ["h3", "heisenberg"] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        assert_eq!(run(name, a.path(), &[]).status.code(), Some(0));
        assert_eq!(run(name, b.path(), &[]).status.code(), Some(0));
        let ra = report(a.path(), name);
        for t in ra["traces"].as_array().unwrap() {
            let t = t.as_str().unwrap();
            assert_eq!(fs::read(a.path().join(t)).unwrap(), fs::read(b.path().join(t)).unwrap(), "{t}");
        }
        assert_eq!(without_timestamp(ra), without_timestamp(report(b.path(), name)));
    }
}

#[test]
fn seed_changes_sampled_points() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run("flat", a.path(), &[]);
    run("flat", b.path(), &["--seed", "99"]);
    let (ra, rb) = (report(a.path(), "flat"), report(b.path(), "flat"));
    assert_eq!(rb["seed"], 99);
    assert_ne!(check(&ra, "connection")["max_residual"], check(&rb, "connection")["max_residual"]);
}

/// Set `UPDATE_GOLDEN=1` to rewrite the golden files after an intended change.
#[test]
fn golden_equator_outputs() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run("sphere_equator", dir.path(), &[]).status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("sphere_equator_launch01.csv")).unwrap();
    let rep = serde_json::to_string_pretty(&without_timestamp(report(dir.path(), "sphere_equator"))).unwrap() + "\n";
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(golden("")).unwrap();
        fs::write(golden("sphere_equator_launch01.csv"), &csv).unwrap();
        fs::write(golden("sphere_equator_report.json"), &rep).unwrap();
    }
    assert_eq!(csv, fs::read_to_string(golden("sphere_equator_launch01.csv")).unwrap());
    assert_eq!(rep, fs::read_to_string(golden("sphere_equator_report.json")).unwrap());
}

#[test]
fn csv_header_layout() {
    let dir = tempfile::tempdir().unwrap();
    run("flat", dir.path(), &[]);
    let csv = fs::read_to_string(dir.path().join("flat_launch01.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "t,x1,x2,x3,v1,v2,v3,b,omega,clairaut_invariant,acceleration_split"
    );
    // stride 500 over 10 000 steps
    assert_eq!(csv.lines().count(), 1 + 21);
}

#[test]
fn list_and_describe() {
    let out = warpgeo(&["list"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for name in ["sphere2", "heisenberg3", "clairaut", "sectional:item6", "geodesic-case:mixed"] {
        assert!(text.contains(name), "{name}");
    }
    let out = warpgeo(&["describe", "ricci:item2"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("Laplacian"));
    assert_eq!(warpgeo(&["describe", "nope"]).status.code(), Some(2));
}
