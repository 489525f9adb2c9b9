//! The binary's exit codes, manifests and output files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_center-manifold"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn out_dir(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("cm-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn run(cmd: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    bin().arg(cmd).arg("--config").arg(cfg).arg("--out").arg(out).args(extra).output().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn malformed_config_exits_2() {
    let out = out_dir("malformed");
    let o = run("invariant", &config("malformed.toml"), &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["error"]["kind"], "Config");
}

#[test]
fn unknown_key_system_and_override_exit_2() {
    let dir = out_dir("bad-inputs");
    std::fs::create_dir_all(&dir).unwrap();
    let unknown_key = dir.join("unknown_key.toml");
    std::fs::write(&unknown_key, "[tube]\nspaceing = 1e-3\n").unwrap();
    let unknown_system = dir.join("unknown_system.toml");
    std::fs::write(&unknown_system, "[system]\nname = \"missing\"\n").unwrap();
    assert_eq!(run("analyze", &unknown_key, &dir.join("a"), &[]).status.code(), Some(2));
    assert_eq!(run("analyze", &unknown_system, &dir.join("b"), &[]).status.code(), Some(2));
    assert_eq!(run("analyze", &config("linear3.toml"), &dir.join("c"), &["--tol-override", "tube.nope=1"]).status.code(), Some(2));
    assert_eq!(run("analyze", &dir.join("absent.toml"), &dir.join("d"), &[]).status.code(), Some(2));
}

#[test]
fn usage_errors_exit_2_and_help_exits_0() {
    assert_eq!(bin().arg("invariant").output().unwrap().status.code(), Some(2));
    assert_eq!(bin().args(["frobnicate", "--config", "x"]).output().unwrap().status.code(), Some(2));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn curved2_invariant_then_verify() {
    let out = out_dir("curved2");
    let o = run("invariant", &config("curved2.toml"), &out, &["--seed", "11", "--workers", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&out.join("manifest.json"));
    let h2 = m["summary"]["second_difference_at_k"].as_f64().unwrap();
    assert!((h2 + 2.0).abs() <= 1e-3, "h''(0) = {h2}");
    assert_eq!(m["seed"], 11);
    assert_eq!(m["status"], "pass");
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    for f in ["graph.csv", "graph.json", "invariant.json", "trace.json", "trace.svg"] {
        assert!(out.join(f).exists(), "{f}");
        assert!(m["outputs"].as_array().unwrap().iter().any(|v| v == f), "{f}");
    }
    let csv = std::fs::read_to_string(out.join("graph.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "u0,t0,x0,x1");
    assert!(m["ledger"]["m"].as_f64().unwrap() > 0.0);
    let v = run("verify", &config("curved2.toml"), &out, &[]);
    assert_eq!(v.status.code(), Some(0), "{}", String::from_utf8_lossy(&v.stderr));
    assert_eq!(json(&out.join("verify.json"))["checks"]["local_invariance"]["pass"], true);
}

#[test]
fn verify_without_saved_graph_exits_2() {
    let out = out_dir("verify-missing");
    assert_eq!(run("verify", &config("curved2.toml"), &out, &[]).status.code(), Some(2));
}

#[test]
fn solenoid_invariant_stops_at_connections() {
    let out = out_dir("solenoid");
    let o = run("invariant", &config("solenoid.toml"), &out, &[]);
    assert_eq!(o.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("no-strong-connection condition fails"), "{stderr}");
    assert!(stderr.contains("graph transform not run"), "{stderr}");
    let r = json(&out.join("invariant.json"));
    assert!(r["connections"]["distinct_pairs"].as_u64().unwrap() >= 10);
    assert_eq!(r["graph_transform_run"], false);
    assert!(!out.join("graph.json").exists());
}

#[test]
fn smooth_fn_writes_grid_plot_and_cover() {
    let out = out_dir("smooth");
    let o = run("smooth-fn", &config("smooth2d.toml"), &out, &[]);
    assert_eq!(o.status.code(), Some(0));
    let cover = json(&out.join("cover.json"));
    let cubes = cover["cubes"].as_array().unwrap();
    assert!(!cubes.is_empty());
    assert!(cubes[0]["level"].is_u64() && cubes[0]["center"].as_array().unwrap().len() == 2);
    let csv = std::fs::read_to_string(out.join("smooth.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 81 * 81);
    assert!(std::fs::read_to_string(out.join("smooth.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn user_polynomial_map_from_config() {
    let out = out_dir("poly");
    let o = run("invariant", &config("user_polynomial.toml"), &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let h2 = json(&out.join("manifest.json"))["summary"]["second_difference_at_k"].as_f64().unwrap();
    assert!((h2 + 2.0).abs() <= 1e-3, "h''(0) = {h2}");
}

#[test]
fn override_changes_effective_hash_only() {
    let (a, b) = (out_dir("hash-a"), out_dir("hash-b"));
    run("analyze", &config("linear3.toml"), &a, &[]);
    run("analyze", &config("linear3.toml"), &b, &["--tol-override", "analyze.n0=6"]);
    let (ma, mb) = (json(&a.join("manifest.json")), json(&b.join("manifest.json")));
    assert_eq!(ma["config_hash"], mb["config_hash"]);
    assert_ne!(ma["effective_config_hash"], mb["effective_config_hash"]);
    assert_eq!(mb["config"]["analyze"]["n0"], 6);
}
