use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures");
const TIMESTAMP: &str = "2025-03-01T12:00:00Z";

fn aibom(store: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aibom"))
        .env("AIBOM_STORE", store)
        .args(args)
        .output()
        .unwrap()
}

fn workload(name: &str) -> String {
    format!("{FIXTURES}/workloads/{name}.jsonl")
}

fn feed(name: &str) -> String {
    format!("{FIXTURES}/feeds/{name}")
}

fn capture(store: &Path, name: &str, id: &str, extra: &[&str]) -> Output {
    let w = workload(name);
    let osv = feed("osv.json");
    let nvd = feed("nvd.json");
    let mut args = vec![
        "capture",
        "--workload",
        &w,
        "--feed",
        &osv,
        "--feed",
        &nvd,
        "--session-id",
        id,
        "--timestamp",
        TIMESTAMP,
    ];
    args.extend_from_slice(extra);
    aibom(store, &args)
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}\n{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
    })
}

#[test]
fn capture_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let sealed = capture(tmp.path(), "logit-glm", "ok", &[]);
    assert_eq!(sealed.status.code(), Some(0));
    assert_eq!(json(&sealed)["status"], "sealed");

    let failed = capture(tmp.path(), "tampered-hash", "bad", &[]);
    assert_eq!(failed.status.code(), Some(2));
    assert_eq!(json(&failed)["status"], "fail-closed");
    assert!(String::from_utf8_lossy(&failed.stderr).contains("failed closed"));

    let w = workload("logit-glm");
    let missing_feed = aibom(tmp.path(), &["capture", "--workload", &w, "--feed", "/no/such/feed.json"]);
    assert_eq!(missing_feed.status.code(), Some(1));
    assert!(missing_feed.stdout.is_empty());

    let duplicate = capture(tmp.path(), "logit-glm", "ok", &[]);
    assert_eq!(duplicate.status.code(), Some(1));

    let bad_usage = aibom(tmp.path(), &["capture"]);
    assert_ne!(bad_usage.status.code(), Some(0));
}

#[test]
fn replay_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    capture(tmp.path(), "etl-merge", "etl", &[]);
    let osv = feed("osv.json");
    let nvd = feed("nvd.json");
    let replay = aibom(tmp.path(), &["replay", "etl", "--feed", &osv, "--feed", &nvd, "--runs", "4"]);
    assert_eq!(replay.status.code(), Some(0), "{}", String::from_utf8_lossy(&replay.stderr));
    let r = json(&replay);
    assert_eq!(r["runs"].as_array().unwrap().len(), 4);
    assert!(r["runs"].as_array().unwrap().iter().all(|run| run["parity"]["ep"] == true));
    assert_eq!(r["score"]["ep"]["pct"], 100.0);

    let missing = aibom(tmp.path(), &["replay", "nope"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("not found"));

    capture(tmp.path(), "logit-glm", "logit", &[]);
    let registry = format!("{FIXTURES}/registries/tre-b");
    let unavailable = aibom(tmp.path(), &["replay", "logit", "--registry", &registry]);
    assert_eq!(unavailable.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unavailable.stderr).contains("threadpoolctl"));

    capture(tmp.path(), "tampered-hash", "bad", &[]);
    let report = aibom(tmp.path(), &["report", "etl", "bad", "--feed", &osv, "--feed", &nvd, "--runs", "3"]);
    assert_eq!(report.status.code(), Some(0), "{}", String::from_utf8_lossy(&report.stderr));
    let rep = json(&report);
    assert_eq!(rep["sessions"][0]["status"], "sealed");
    assert_eq!(rep["sessions"][1]["status"], "fail-closed");
    assert!(rep["sessions"][1].get("replay").is_none());
    for axis in ["ep", "sp", "env_state_match", "vex_alignment"] {
        assert!(rep["score"][axis]["trials"].as_u64().unwrap() > 0, "{axis}");
        assert!(rep["score"][axis]["wilson"].is_array(), "{axis}");
    }
    let summary = String::from_utf8_lossy(&report.stderr);
    assert!(summary.contains("bad: failed closed"), "{summary}");
}

#[test]
fn ablate_reports_four_variants() {
    let tmp = tempfile::tempdir().unwrap();
    let w = workload("late-bind-heavy");
    let osv = feed("osv.json");
    let out = aibom(tmp.path(), &["ablate", "--workload", &w, "--feed", &osv, "--timestamp", TIMESTAMP]);
    assert_eq!(out.status.code(), Some(0));
    let report = json(&out);
    let variants: Vec<&str> = report["runs"].as_array().unwrap().iter().map(|r| r["variant"].as_str().unwrap()).collect();
    assert_eq!(variants, ["full", "no-mcp", "no-a2a", "no-agntcy"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("delta +0.5000"));
    // ablation never writes sessions
    let store = aibom_core::Store::open(tmp.path()).unwrap();
    assert!(store.sessions().unwrap().is_empty() && store.incidents().unwrap().is_empty());
}

#[test]
fn comply_exit_code_follows_results() {
    let tmp = tempfile::tempdir().unwrap();
    capture(tmp.path(), "logit-glm", "clean", &[]);
    let ok = aibom(tmp.path(), &["comply", "clean"]);
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(json(&ok).as_array().unwrap().len(), 13);

    capture(tmp.path(), "late-bind-heavy", "novex", &["--disable-agntcy"]);
    let fail = aibom(tmp.path(), &["comply", "novex"]);
    assert_eq!(fail.status.code(), Some(2));
    let results = json(&fail);
    let csaf = results.as_array().unwrap().iter().find(|r| r["rule_id"] == "CSAF-VEX").unwrap();
    assert_eq!(csaf["status"], "fail");
    assert!(String::from_utf8_lossy(&fail.stderr).contains("CSAF-VEX"));
}

#[test]
fn policy_file_is_honoured() {
    let tmp = tempfile::tempdir().unwrap();
    let policy = tmp.path().join("policy.json");
    std::fs::write(&policy, r#"{"policy_version": "tre-sdc-2026.0"}"#).unwrap();
    let store = tmp.path().join("store");
    capture(&store, "logit-glm", "p", &[]);
    let out = aibom(&store, &["comply", "p", "--policy", policy.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let results = json(&out);
    let iso = results.as_array().unwrap().iter().find(|r| r["rule_id"] == "ISO-27001-A8-9").unwrap();
    assert_eq!(iso["status"], "fail");

    std::fs::write(&policy, r#"{"policy_versio": 1}"#).unwrap();
    let bad = aibom(&store, &["comply", "p", "--policy", policy.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));
}
