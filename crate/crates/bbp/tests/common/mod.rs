#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use bbp_core::audit::{InterpretationRecord, IssuedSequence};
use serde_json::{json, Value};
use tower::ServiceExt;

pub const SEED: &str = "31415926535897932384";
pub const BUNDLES: [(&str, &str, u64); 2] = [("B-1", "north", 1200), ("B-2", "south", 800)];

/// Two-candidate contest with a wide reported margin, sampled at 5%.
pub fn landslide_config() -> Value {
    json!({
        "audit_id": "county-2024",
        "alpha": 0.05,
        "contests": [{
            "contest_id": "mayor",
            "candidates": ["alice", "bob"],
            "winners": ["alice"],
            "reported": { "alice": 1500, "bob": 450 },
            "n_total_reported": 2000
        }],
        "round_rates": { "rates": [0.05] },
        "seed_policy": "central",
        "central_seed": SEED
    })
}

/// Synthetic ballots: four in five for the reported winner, the rest split
/// between the loser and no vote.
pub fn landslide_vote(position: u64) -> &'static str {
    match position % 10 {
        0..=7 => "alice",
        8 => "bob",
        _ => "other",
    }
}

pub fn interpretations(seqs: &[IssuedSequence]) -> Vec<InterpretationRecord> {
    seqs.iter()
        .flat_map(|s| {
            s.new_positions.iter().map(move |&p| InterpretationRecord {
                audit_id: Some("county-2024".into()),
                bundle_id: s.bundle_id.clone(),
                round: s.round,
                position: p,
                contest_id: "mayor".into(),
                interpretation: landslide_vote(p).into(),
            })
        })
        .collect()
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_bbp"))
}

pub fn run_cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(bin()).args(args).output().expect("run bbp");
    if out.status.success() {
        Ok(String::from_utf8(out.stdout).unwrap())
    } else {
        Err(String::from_utf8(out.stderr).unwrap())
    }
}

pub fn cli_json(args: &[&str]) -> Value {
    serde_json::from_str(&run_cli(args).unwrap_or_else(|e| panic!("bbp {args:?}: {e}"))).unwrap()
}

/// The landslide audit through the CLI, returning (issued sequences, risk
/// report).
pub fn cli_pipeline(dir: &Path) -> (Vec<IssuedSequence>, Value) {
    let audit = dir.join("audit.json");
    let config = dir.join("config.json");
    std::fs::write(&config, landslide_config().to_string()).unwrap();
    let a = audit.to_str().unwrap();
    cli_json(&["--audit-file", a, "create", "--config", config.to_str().unwrap()]);
    for (id, site, count) in BUNDLES {
        cli_json(&["--audit-file", a, "bundle", "add", "--id", id, "--site", site, "--count", &count.to_string()]);
    }
    let seqs: Vec<IssuedSequence> = BUNDLES
        .iter()
        .map(|(id, _, _)| serde_json::from_value(cli_json(&["--audit-file", a, "sequence", "--bundle", id, "--round", "0"])).unwrap())
        .collect();
    let csv = dir.join("interpretations.csv");
    let f = std::fs::File::create(&csv).unwrap();
    bbp_core::audit::write_interpretations_csv(f, &interpretations(&seqs)).unwrap();
    let ingest = cli_json(&["--audit-file", a, "ingest", csv.to_str().unwrap()]);
    assert_eq!(ingest["rejected"], json!([]));
    let risk = cli_json(&["--audit-file", a, "risk"]);
    (seqs, risk)
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

/// The landslide audit through the HTTP API.
pub async fn http_pipeline(app: &Router) -> (Vec<IssuedSequence>, Value) {
    let (s, _) = call(app, "POST", "/audits", Some(landslide_config())).await;
    assert_eq!(s, StatusCode::CREATED);
    for (id, site, count) in BUNDLES {
        let (s, body) = call(
            app,
            "POST",
            "/audits/county-2024/bundles",
            Some(json!({ "bundle_id": id, "site_id": site, "count": count })),
        )
        .await;
        assert_eq!(s, StatusCode::CREATED, "{body}");
    }
    let mut seqs = Vec::new();
    for (id, _, _) in BUNDLES {
        let (s, body) = call(app, "GET", &format!("/audits/county-2024/bundles/{id}/sequence?round=0"), None).await;
        assert_eq!(s, StatusCode::OK, "{body}");
        seqs.push(serde_json::from_value(body).unwrap());
    }
    let records = serde_json::to_value(interpretations(&seqs)).unwrap();
    let (s, body) = call(app, "POST", "/audits/county-2024/interpretations", Some(records)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["rejected"], json!([]));
    let (s, risk) = call(app, "GET", "/audits/county-2024/risk", None).await;
    assert_eq!(s, StatusCode::OK);
    (seqs, risk)
}

pub fn golden_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Compare with a checked-in golden file; `BBP_BLESS=1` rewrites it.
pub fn check_golden(name: &str, actual: &str) -> Result<(), String> {
    let path = golden_path(name);
    if std::env::var_os("BBP_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
        return Ok(());
    }
    let expected = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected == actual {
        Ok(())
    } else {
        Err(format!("{} differs from the current output", path.display()))
    }
}

pub fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).unwrap() + "\n"
}
