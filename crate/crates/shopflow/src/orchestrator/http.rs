//! REST surface of the orchestrator.

use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use shopflow_core::flow::{FlowSpec, RunStatus};

use super::{OrchError, Orchestrator};
use crate::server::error_response;

pub const DEFAULT_PAGE_SIZE: usize = 20;

impl IntoResponse for OrchError {
    fn into_response(self) -> Response {
        let status = match self {
            OrchError::UnknownFlow(_) | OrchError::UnknownRun(_) => StatusCode::NOT_FOUND,
            OrchError::InvalidSpec(_) => StatusCode::BAD_REQUEST,
            OrchError::RunNotTerminal(_) | OrchError::RunNotFailed(_) | OrchError::RunNotActive(_) => StatusCode::CONFLICT,
            OrchError::Journal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        error_response(status, self.code(), self.to_string())
    }
}

fn bad_request(msg: impl Into<String>) -> Response {
    error_response(StatusCode::BAD_REQUEST, "BAD_REQUEST", msg)
}

type Orch = Arc<Orchestrator>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, OrchError> + Send + 'static) -> Result<T, OrchError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| OrchError::Journal(e.to_string()))?
}

async fn register(State(o): State<Orch>, body: Result<Json<FlowSpec>, JsonRejection>) -> Response {
    let spec = match body {
        Ok(Json(s)) => s,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, "INVALID_SPEC", e.body_text()),
    };
    match blocking(move || o.register(spec)).await {
        Ok(r) => (StatusCode::CREATED, Json(r)).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn list_flows(State(o): State<Orch>) -> Response {
    Json(o.flows()).into_response()
}

#[derive(Deserialize, Default)]
struct RunBody {
    #[serde(default)]
    params: Value,
}

async fn start_run(State(o): State<Orch>, Path(id): Path<String>, body: Option<Json<RunBody>>) -> Response {
    let params = body.map(|Json(b)| b.params).unwrap_or(Value::Null);
    match blocking(move || o.run_flow(&id, params)).await {
        Ok(run_id) => (StatusCode::ACCEPTED, Json(json!({ "run_id": run_id }))).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn get_run(State(o): State<Orch>, Path(id): Path<String>) -> Response {
    match o.get_run(&id) {
        Ok(r) => Json(r).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn list_runs(State(o): State<Orch>, Query(q): Query<HashMap<String, String>>) -> Response {
    let status = match q.get("status").filter(|s| !s.is_empty()) {
        None => None,
        Some(s) => match s.parse::<RunStatus>() {
            Ok(st) => Some(st),
            Err(()) => return bad_request(format!("unknown status `{s}`")),
        },
    };
    let num = |key: &str, default: usize| match q.get(key) {
        None => Some(default),
        Some(v) => v.parse::<usize>().ok().filter(|n| *n >= 1),
    };
    let Some(page) = num("page", 1) else {
        return bad_request("page must be a positive integer");
    };
    let Some(page_size) = num("page_size", DEFAULT_PAGE_SIZE) else {
        return bad_request("page_size must be a positive integer");
    };
    Json(o.list_runs(status, page, page_size)).into_response()
}

async fn retry_run(State(o): State<Orch>, Path(id): Path<String>) -> Response {
    match blocking(move || o.retry_run(&id)).await {
        Ok(run_id) => (StatusCode::ACCEPTED, Json(json!({ "run_id": run_id }))).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn cancel_run(State(o): State<Orch>, Path(id): Path<String>) -> Response {
    let rid = id.clone();
    match blocking(move || o.cancel_run(&rid)).await {
        Ok(()) => (StatusCode::ACCEPTED, Json(json!({ "run_id": id, "cancel_requested": true }))).into_response(),
        Err(e) => e.into_response(),
    }
}

pub fn router(orch: Orch) -> Router {
    Router::new()
        .route("/flows", post(register).get(list_flows))
        .route("/flows/{id}/runs", post(start_run))
        .route("/runs", get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/retry", post(retry_run))
        .route("/runs/{id}/cancel", post(cancel_run))
        .with_state(orch)
}
