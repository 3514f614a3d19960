mod common;

use common::*;
use serde_json::json;

#[test]
fn pipeline_confirms_and_is_repeatable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (seqs_a, risk_a) = cli_pipeline(a.path());
    let (seqs_b, risk_b) = cli_pipeline(b.path());
    assert_eq!(seqs_a, seqs_b);
    assert_eq!(risk_a, risk_b);
    assert_eq!(risk_a["contests"][0]["decision"], "CONFIRM");
}

#[test]
fn create_refuses_to_clobber() {
    let dir = tempfile::tempdir().unwrap();
    cli_pipeline(dir.path());
    let audit = dir.path().join("audit.json");
    let config = dir.path().join("config.json");
    let err = run_cli(&["--audit-file", audit.to_str().unwrap(), "create", "--config", config.to_str().unwrap()]).unwrap_err();
    let err: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(err["code"], "conflict");
}

#[test]
fn global_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, landslide_config().to_string()).unwrap();
    let audit = dir.path().join("audit.json");
    let a = audit.to_str().unwrap();
    let state = cli_json(&[
        "--audit-file", a, "--alpha", "0.1", "--rate", "0.2", "--seed", "00000000000000000000",
        "create", "--config", config.to_str().unwrap(),
    ]);
    assert_eq!(state["config"]["alpha"], 0.1);
    assert_eq!(state["config"]["round_rates"]["rates"], json!([0.2]));
    assert_eq!(state["config"]["central_seed"], "00000000000000000000");
    let err = run_cli(&["--audit-file", a, "--seed", "123", "bundle", "add", "--id", "x", "--site", "y"]).unwrap_err();
    assert!(err.contains("20"), "{err}");
}

#[test]
fn manifest_free_worksheet() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    let mut c = landslide_config();
    c["round_rates"] = json!({ "rates": [0.1] });
    c["central_seed"] = json!("00000000000000000000");
    std::fs::write(&config, c.to_string()).unwrap();
    let audit = dir.path().join("audit.json");
    let a = audit.to_str().unwrap();
    cli_json(&["--audit-file", a, "create", "--config", config.to_str().unwrap()]);
    cli_json(&["--audit-file", a, "bundle", "add", "--id", "B-1", "--site", "s"]);
    let sheet = run_cli(&["--audit-file", a, "sequence", "--bundle", "B-1", "--horizon", "20", "--format", "csv"]).unwrap();
    assert_eq!(
        sheet,
        "bundle_id,round,draw_index,y,position\nB-1,0,1,5,5\nB-1,0,2,7,12\nB-1,0,3,7,19\n"
    );
    let b = cli_json(&["--audit-file", a, "bundle", "count", "--id", "B-1", "--count", "15"]);
    assert_eq!(b["count_observed"], 15);
    let seq = cli_json(&["--audit-file", a, "sequence", "--bundle", "B-1"]);
    assert_eq!(seq["new_positions"], json!([5, 12]));
    assert_eq!(seq["sequence"]["draws"], 3);
}

#[test]
fn escalate_needs_rate() {
    let dir = tempfile::tempdir().unwrap();
    cli_pipeline(dir.path());
    let a = dir.path().join("audit.json");
    let err = run_cli(&["--audit-file", a.to_str().unwrap(), "escalate"]).unwrap_err();
    assert!(err.contains("usage_error"));
    let plan = cli_json(&["--audit-file", a.to_str().unwrap(), "--rate", "0.1", "escalate"]);
    assert!(plan["notice"].is_string());
}

#[test]
fn plan_output_fields() {
    let asn = cli_json(&["plan", "--margin", "0.1", "--n-total", "599146", "--trials", "0"]);
    assert_eq!(asn["method"], "asn");
    assert!((asn["recommended_rate"].as_f64().unwrap() - 0.001).abs() < 1e-9);
    assert_eq!(asn["power_estimate"], serde_json::Value::Null);
    let half = cli_json(&["plan", "--margin", "0.1", "--n-total", "599146", "--invalid-fraction", "0.5", "--trials", "0"]);
    let doubled = 2.0 * asn["recommended_rate"].as_f64().unwrap();
    assert!((half["recommended_rate"].as_f64().unwrap() - doubled).abs() < 1e-15);
    let sim = cli_json(&["plan", "--margin", "0.2", "--n-total", "20000", "--simulate", "--trials", "200", "--power", "0.8"]);
    assert_eq!(sim["method"], "simulated");
    assert!(sim["power_estimate"].as_f64().unwrap() >= 0.8);
    for key in ["alpha", "margin", "invalid_fraction", "asn", "recommended_rate", "method", "power_estimate", "trials"] {
        assert!(sim.get(key).is_some(), "{key}");
    }
}

#[test]
fn simulate_writes_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("w.csv");
    let svg = dir.path().join("w.svg");
    run_cli(&[
        "simulate", "--n-total", "2000", "--shares", "0.6,0.7", "--alpha", "0.05", "--trials", "50",
        "--out", csv.to_str().unwrap(), "--plot", svg.to_str().unwrap(),
    ])
    .unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("method,n_total,winner_share,alpha,q25,q50,q75,q90,mean,trials,seed\n"));
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
    let stdout = run_cli(&["simulate", "--n-total", "2000", "--shares", "0.6,0.7", "--alpha", "0.05", "--trials", "50"]).unwrap();
    assert_eq!(stdout, text);
}

#[test]
fn import_errors_surface() {
    let dir = tempfile::tempdir().unwrap();
    let audit = dir.path().join("audit.json");
    std::fs::write(&audit, "{\"schema_version\": 1, \"config\": ").unwrap();
    let err = run_cli(&["--audit-file", audit.to_str().unwrap(), "risk"]).unwrap_err();
    assert!(err.contains("parse_error") && err.contains("byte 31"), "{err}");
}
