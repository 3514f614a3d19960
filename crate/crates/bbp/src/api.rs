//! HTTP API over a set of audits.
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | POST | `/audits` | `AuditConfig` | `AuditState` |
//! | POST | `/audits/{id}/bundles` | `BundleRegistration` | `Bundle` |
//! | GET | `/audits/{id}/bundles/{bid}/sequence?round=k[&horizon=h]` | | `IssuedSequence` |
//! | POST | `/audits/{id}/interpretations` | records (JSON array or CSV) | `IngestReport` |
//! | GET | `/audits/{id}/risk` | | `RiskReport` |
//! | POST | `/audits/{id}/escalate` | `{"p_next": p}` | `EscalationPlan` |
//!
//! Posting a bundle that is already registered, with the same site and
//! seed, records its count. Errors are `{"code", "message", "detail"}`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bbp_core::audit::{
    read_interpretations_csv, AuditConfig, AuditError, AuditState, BundleRegistration,
    InterpretationRecord,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::store;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            code: code.to_owned(),
            message: message.into(),
            detail: Value::Null,
        }
    }

    fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }
}

impl From<AuditError> for ApiError {
    fn from(e: AuditError) -> Self {
        let status = match e.code() {
            "not_found" => StatusCode::NOT_FOUND,
            "conflict" | "precondition_failed" => StatusCode::CONFLICT,
            "parse_error" => StatusCode::BAD_REQUEST,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        let detail = match &e {
            AuditError::Parse { offset, .. } => serde_json::json!({ "offset": offset }),
            AuditError::RoundOutOfRange { round, planned } => {
                serde_json::json!({ "round": round, "planned_rounds": planned })
            }
            _ => Value::Null,
        };
        ApiError::new(status, e.code(), e.to_string()).with_detail(detail)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Shared server state. Every request holds the one lock for its duration.
#[derive(Clone, Default)]
pub struct AppState {
    audits: Arc<Mutex<BTreeMap<String, AuditState>>>,
    data_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(data_dir: Option<PathBuf>) -> Self {
        Self {
            audits: Arc::default(),
            data_dir,
        }
    }

    /// Start from audits that already exist, e.g. loaded from disk.
    pub fn with_audits(data_dir: Option<PathBuf>, audits: impl IntoIterator<Item = AuditState>) -> Self {
        let map = audits
            .into_iter()
            .map(|a| (a.audit_id().to_owned(), a))
            .collect();
        Self {
            audits: Arc::new(Mutex::new(map)),
            data_dir,
        }
    }

    pub fn snapshot(&self, audit_id: &str) -> Option<AuditState> {
        self.audits.lock().expect("audit lock").get(audit_id).cloned()
    }

    /// Run `f` against one audit; the document is persisted if `f` succeeds
    /// and changed it.
    fn with_audit<T>(
        &self,
        audit_id: &str,
        f: impl FnOnce(&mut AuditState) -> Result<T, AuditError>,
    ) -> ApiResult<T> {
        let mut audits = self.audits.lock().expect("audit lock");
        let state = audits
            .get_mut(audit_id)
            .ok_or_else(|| AuditError::UnknownAudit(audit_id.to_owned()))?;
        let before = state.clone();
        let out = f(state)?;
        if *state != before {
            self.persist(state)?;
        }
        Ok(out)
    }

    fn persist(&self, state: &AuditState) -> ApiResult<()> {
        if let Some(dir) = &self.data_dir {
            store::save(&store::audit_path(dir, state.audit_id()), state).map_err(|e| {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage_error", e.to_string())
            })?;
        }
        Ok(())
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/audits", post(create_audit))
        .route("/audits/{id}/bundles", post(add_bundle))
        .route("/audits/{id}/bundles/{bid}/sequence", get(sequence))
        .route("/audits/{id}/interpretations", post(ingest))
        .route("/audits/{id}/risk", get(risk))
        .route("/audits/{id}/escalate", post(escalate))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state)
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| {
        ApiError::new(StatusCode::BAD_REQUEST, "parse_error", e.to_string())
            .with_detail(serde_json::json!({ "line": e.line(), "column": e.column() }))
    })
}

async fn create_audit(State(app): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<AuditState>)> {
    let config: AuditConfig = parse_json(&body)?;
    let state = AuditState::create_audit(config)?;
    let mut audits = app.audits.lock().expect("audit lock");
    if audits.contains_key(state.audit_id()) {
        return Err(AuditError::DuplicateAudit(state.audit_id().to_owned()).into());
    }
    app.persist(&state)?;
    audits.insert(state.audit_id().to_owned(), state.clone());
    Ok((StatusCode::CREATED, Json(state)))
}

async fn add_bundle(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let reg: BundleRegistration = parse_json(&body)?;
    app.with_audit(&id, |st| {
        let Some(existing) = st.bundle(&reg.bundle_id).cloned() else {
            let b = st.add_bundle(reg)?.clone();
            return Ok((StatusCode::CREATED, Json(b)).into_response());
        };
        let same_seed = reg.seed.as_ref().is_none_or(|s| *s == existing.seed);
        match reg.count {
            Some(count) if existing.site_id == reg.site_id && same_seed => {
                let b = st.record_bundle_count(&reg.bundle_id, count)?.clone();
                Ok((StatusCode::OK, Json(b)).into_response())
            }
            _ => Err(AuditError::DuplicateBundle(reg.bundle_id)),
        }
    })
}

#[derive(Debug, Deserialize)]
struct SequenceQuery {
    round: u32,
    horizon: Option<u64>,
}

async fn sequence(
    State(app): State<AppState>,
    Path((id, bid)): Path<(String, String)>,
    Query(q): Query<SequenceQuery>,
) -> ApiResult<Response> {
    app.with_audit(&id, |st| {
        let seq = st.issue_skip_sequence(&bid, q.round, q.horizon)?;
        Ok(Json(seq).into_response())
    })
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RecordBatch {
    List(Vec<InterpretationRecord>),
    Wrapped { records: Vec<InterpretationRecord> },
}

async fn ingest(
    State(app): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let is_csv = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("text/csv"));
    let records = if is_csv {
        read_interpretations_csv(body.as_ref())?
    } else {
        match parse_json::<RecordBatch>(&body)? {
            RecordBatch::List(r) | RecordBatch::Wrapped { records: r } => r,
        }
    };
    app.with_audit(&id, |st| Ok(Json(st.ingest_interpretations(records)).into_response()))
}

async fn risk(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    app.with_audit(&id, |st| Ok(Json(st.compute_risk_report()?).into_response()))
}

#[derive(Debug, Deserialize)]
struct EscalateBody {
    p_next: f64,
}

async fn escalate(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let req: EscalateBody = parse_json(&body)?;
    app.with_audit(&id, |st| Ok(Json(st.plan_escalation(req.p_next)?).into_response()))
}

/// Serve until ctrl-c.
pub async fn serve(app: AppState, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
