//! HTTP/1.1 JSON surface over [`System`].
//!
//! Credentials travel as `X-User-Id` / `X-User-Key` headers (64-char
//! lowercase hex). All state funnels through one mutex: the ledger and
//! dosing modules are single-writer by contract, and handlers hold the
//! lock only for the synchronous core call.

use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use super::{Credentials, GatewayError, IngestBatch, RegistrationRequest, System};
use crate::ledger::TxKind;

pub type SharedSystem = Arc<Mutex<System>>;

/// Seconds since the epoch, truncated to the ledger's 4-byte width.
pub fn now_unix() -> u32 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs() as u32)
        .unwrap_or(0)
}

fn error_response(e: &GatewayError) -> Response {
    let status = StatusCode::from_u16(e.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, Json(json!({ "error": e.to_string() }))).into_response()
}

fn credentials(headers: &HeaderMap) -> Result<Credentials, Box<Response>> {
    let field = |name: &str| -> Result<[u8; 32], String> {
        let raw = headers
            .get(name)
            .and_then(|v| v.to_str().ok())
            .ok_or_else(|| format!("missing {name} header"))?;
        let bytes = hex::decode(raw).map_err(|_| format!("{name} is not hex"))?;
        bytes
            .try_into()
            .map_err(|_| format!("{name} must be 64 hex chars"))
    };
    let build = || -> Result<Credentials, String> {
        Ok(Credentials {
            user_id: field("x-user-id")?,
            public_key: field("x-user-key")?,
        })
    };
    build().map_err(|message| {
        Box::new((StatusCode::UNAUTHORIZED, Json(json!({ "error": message }))).into_response())
    })
}

async fn register(
    State(system): State<SharedSystem>,
    Json(request): Json<RegistrationRequest>,
) -> Response {
    let mut system = system.lock().unwrap();
    match system.register(request) {
        Ok(creds) => (
            StatusCode::CREATED,
            Json(json!({
                "user_id": hex::encode(creds.user_id),
                "public_key": hex::encode(creds.public_key),
            })),
        )
            .into_response(),
        Err(e) => error_response(&e),
    }
}

async fn ingest(
    State(system): State<SharedSystem>,
    headers: HeaderMap,
    Json(batch): Json<IngestBatch>,
) -> Response {
    let actor = match credentials(&headers) {
        Ok(c) => c,
        Err(r) => return *r,
    };
    let mut system = system.lock().unwrap();
    match system.ingest(&actor, &batch, now_unix()) {
        Ok(summary) => (StatusCode::ACCEPTED, Json(summary)).into_response(),
        Err(e) => error_response(&e),
    }
}

#[derive(Debug, Deserialize)]
struct HistoryQuery {
    kind: Option<String>,
    from: Option<u32>,
    to: Option<u32>,
}

fn parse_kind(raw: &str) -> Result<TxKind, GatewayError> {
    match raw {
        "vitals_data" => Ok(TxKind::VitalsData),
        "detection_result" => Ok(TxKind::DetectionResult),
        "dose_event" => Ok(TxKind::DoseEvent),
        "retrieval_grant" => Ok(TxKind::RetrievalGrant),
        other => Err(GatewayError::BadRequest(format!(
            "unknown transaction kind `{other}`"
        ))),
    }
}

async fn history(
    State(system): State<SharedSystem>,
    Path(patient): Path<String>,
    Query(query): Query<HistoryQuery>,
    headers: HeaderMap,
) -> Response {
    let actor = match credentials(&headers) {
        Ok(c) => c,
        Err(r) => return *r,
    };
    let kind = match query.kind.as_deref().map(parse_kind).transpose() {
        Ok(k) => k,
        Err(e) => return error_response(&e),
    };
    let mut system = system.lock().unwrap();
    match system.history(&actor, &patient, kind, query.from, query.to, now_unix()) {
        Ok(views) => Json(views).into_response(),
        Err(e) => error_response(&e),
    }
}

async fn pump(
    State(system): State<SharedSystem>,
    Path(patient): Path<String>,
    headers: HeaderMap,
) -> Response {
    let actor = match credentials(&headers) {
        Ok(c) => c,
        Err(r) => return *r,
    };
    let mut system = system.lock().unwrap();
    match system.pump_status(&actor, &patient) {
        Ok(view) => Json(view).into_response(),
        Err(e) => error_response(&e),
    }
}

async fn chain_verify(State(system): State<SharedSystem>, headers: HeaderMap) -> Response {
    let actor = match credentials(&headers) {
        Ok(c) => c,
        Err(r) => return *r,
    };
    let mut system = system.lock().unwrap();
    match system.verify_chain(&actor) {
        Ok(Ok(())) => Json(json!({ "ok": true })).into_response(),
        Ok(Err(integrity)) => Json(json!({
            "ok": false,
            "error": {
                "block_index": integrity.block_index,
                "reason": integrity.reason.to_string(),
            }
        }))
        .into_response(),
        Err(e) => error_response(&e),
    }
}

async fn chain_block(
    State(system): State<SharedSystem>,
    Path(index): Path<u64>,
    headers: HeaderMap,
) -> Response {
    let actor = match credentials(&headers) {
        Ok(c) => c,
        Err(r) => return *r,
    };
    let mut system = system.lock().unwrap();
    match system.block_view(&actor, index) {
        Ok(view) => Json(view).into_response(),
        Err(e) => error_response(&e),
    }
}

#[derive(Debug, Deserialize)]
struct ApprovalRequest {
    patient_id: String,
    merkle_root: String,
}

async fn approvals(
    State(system): State<SharedSystem>,
    headers: HeaderMap,
    Json(request): Json<ApprovalRequest>,
) -> Response {
    let actor = match credentials(&headers) {
        Ok(c) => c,
        Err(r) => return *r,
    };
    let mut system = system.lock().unwrap();
    match system.submit_approval(&actor, &request.patient_id, &request.merkle_root) {
        Ok(signature) => (
            StatusCode::CREATED,
            Json(json!({ "signature": hex::encode(signature) })),
        )
            .into_response(),
        Err(e) => error_response(&e),
    }
}

pub fn router(system: SharedSystem) -> Router {
    Router::new()
        .route("/register", post(register))
        .route("/ingest", post(ingest))
        .route("/patients/:id/history", get(history))
        .route("/patients/:id/pump", get(pump))
        .route("/chain/verify", get(chain_verify))
        .route("/chain/blocks/:index", get(chain_block))
        .route("/approvals", post(approvals))
        .with_state(system)
}

/// Runs the gateway until the process exits. A 1-second ticker fires
/// any due rechecks against each patient's latest stored glucose.
pub fn serve(system: System) -> Result<(), String> {
    let listen = system.config().listen.clone();
    let shared: SharedSystem = Arc::new(Mutex::new(system));
    let app = router(shared.clone());

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    runtime.block_on(async move {
        let ticker = shared.clone();
        tokio::spawn(async move {
            loop {
                tokio::time::sleep(std::time::Duration::from_secs(1)).await;
                let now = now_unix();
                let mut system = ticker.lock().unwrap();
                for patient in system.due_rechecks(now) {
                    if let Err(e) = system.recheck_patient(patient, now) {
                        eprintln!("recheck for {} failed: {e}", hex::encode(patient));
                    }
                }
            }
        });
        let listener = tokio::net::TcpListener::bind(&listen)
            .await
            .map_err(|e| format!("cannot bind {listen}: {e}"))?;
        eprintln!("listening on {listen}");
        axum::serve(listener, app).await.map_err(|e| e.to_string())
    })
}
