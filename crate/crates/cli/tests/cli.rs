use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn stripwalk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stripwalk"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_json(command: &str, cfg: &str, extra: &[&str]) -> Value {
    let path = config(cfg);
    let mut args = vec![command, "--config", path.to_str().unwrap()];
    args.extend_from_slice(extra);
    let out = stripwalk(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON report")
}

#[test]
fn classify_scalar_walk() {
    let v = run_json("classify", "scalar.json", &[]);
    let lambda = v["result"]["lambda_plus"].as_f64().unwrap();
    assert!((lambda - (2.0f64 / 7.0).ln()).abs() < 1e-12, "{lambda}");
    assert_eq!(v["result"]["classification"], "transient-right");
}

#[test]
fn expect_t1_scalar_walk() {
    let v = run_json("expect-t1", "scalar.json", &[]);
    assert!((v["result"]["value"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(v["result"]["converged"], true);
}

#[test]
fn reports_embed_config_and_seed_overrides() {
    let v = run_json("velocity", "scalar.json", &["--seed", "99", "--env-seed", "4"]);
    assert_eq!(v["command"], "velocity");
    assert_eq!(v["seeds"]["walk"], 99);
    assert_eq!(v["seeds"]["environment"], 4);
    assert_eq!(v["config"]["seeds"]["walk"], 99);
    assert_eq!(v["config"]["environment"]["kind"], "deterministic-sequence");
    assert!(v["config"]["budgets"]["max_terms"].is_u64());
    assert!((v["result"]["v_p"].as_f64().unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn identical_runs_differ_only_in_header() {
    let run = || {
        let mut v = run_json("simulate", "periodic-strip.json", &["--trials", "500", "--horizon", "200"]);
        v.as_object_mut().unwrap().remove("header");
        serde_json::to_string(&v).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn doubles_round_trip_through_the_report() {
    let path = config("periodic-strip.json");
    let out = stripwalk(&["exit", "--config", path.to_str().unwrap()]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("e-1") || text.contains("e0"));
    let v: Value = serde_json::from_str(&text).unwrap();
    let zeta = &v["result"]["layers"][0]["zeta"];
    let row_sum: f64 = zeta[0].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
    assert!((row_sum - 1.0).abs() < 1e-12);
}

#[test]
fn no_left_steps_config_verifies_pathwise_identities() {
    let path = config("no-left-steps.json");
    let out = stripwalk(&["verify", "--config", path.to_str().unwrap()]);
    // The law has Q = 0, so the validity property fails and the run exits 3.
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("PASS simulator/pathwise-identities"), "{stderr}");
    assert!(stderr.contains("FAIL environment/triples-valid"));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let props = v["result"]["properties"].as_array().unwrap();
    let mean_t1 = props.iter().find(|p| p["name"] == "mean-t1").unwrap();
    assert_eq!(mean_t1["passed"], true);
    assert!(mean_t1["detail"].as_str().unwrap().starts_with("empirical 1.000000 +- 0.00e0"));
}

#[test]
fn verify_passes_on_a_valid_walk() {
    let path = config("scalar.json");
    let out = stripwalk(&[
        "verify",
        "--config",
        path.to_str().unwrap(),
        "--trials",
        "2000",
        "--samples",
        "200",
        "--horizon",
        "500",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_errors_exit_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"environment": {"dim": 1}}"#).unwrap();
    for args in [
        vec!["classify", "--config", bad.to_str().unwrap()],
        vec!["classify", "--config", "/definitely/not/here.json"],
    ] {
        assert_eq!(stripwalk(&args).status.code(), Some(2));
    }
    let good = config("scalar.json");
    let out = stripwalk(&["exit", "--config", good.to_str().unwrap(), "--window", "3,1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn module_errors_exit_with_status_one() {
    // Q = 0 violates the atom conditions, which analysis commands reject.
    let path = config("no-left-steps.json");
    let out = stripwalk(&["expect-t1", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn csv_files_land_in_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let path = config("periodic-strip.json");
    let out = stripwalk(&[
        "pmf",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--format",
        "both",
        "--layer",
        "-1",
        "--max-count",
        "4",
    ]);
    assert!(out.status.success());
    assert!(dir.path().join("pmf.json").exists());
    let mut reader = csv::Reader::from_path(dir.path().join("pmf_u.csv")).unwrap();
    assert_eq!(reader.headers().unwrap(), vec!["layer", "site", "count", "probability"]);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2 * 5);
    assert!(rows.iter().all(|r| &r[0] == "-1"));
}

#[test]
fn help_documents_csv_columns() {
    let out = stripwalk(&["pmf", "--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("layer, site, count, probability"));
}
