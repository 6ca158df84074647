//! Event collection: syntactic check, then a verbatim append.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use shopflow_core::event::parse_document;
use shopflow_core::raw::PartitionId;

use crate::fsutil::now_ms;
use crate::rawstore::RawStore;
use crate::server::error_response;

/// Largest accepted request body.
pub const MAX_BODY_BYTES: usize = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectAck {
    pub record_id: u64,
    pub partition_id: PartitionId,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CollectError {
    #[error("MALFORMED_PAYLOAD: {0}")]
    MalformedPayload(String),
    #[error("STORE_UNAVAILABLE: {0}")]
    StoreUnavailable(String),
}

impl CollectError {
    pub fn code(&self) -> &'static str {
        match self {
            CollectError::MalformedPayload(_) => "MALFORMED_PAYLOAD",
            CollectError::StoreUnavailable(_) => "STORE_UNAVAILABLE",
        }
    }
}

impl IntoResponse for CollectError {
    fn into_response(self) -> Response {
        let status = match self {
            CollectError::MalformedPayload(_) => StatusCode::BAD_REQUEST,
            CollectError::StoreUnavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
        };
        error_response(status, self.code(), self.to_string())
    }
}

#[derive(Clone)]
pub struct Collector {
    store: Arc<RawStore>,
}

impl Collector {
    pub fn new(store: Arc<RawStore>) -> Self {
        Collector { store }
    }

    pub fn store(&self) -> &Arc<RawStore> {
        &self.store
    }

    /// Append `body` verbatim if it parses as a JSON object.
    pub fn collect(&self, body: &[u8], received_at: u64) -> Result<CollectAck, CollectError> {
        parse_document(body).map_err(|e| CollectError::MalformedPayload(e.to_string()))?;
        let (partition_id, record_id) = self.store.append(body, received_at).map_err(|e| CollectError::StoreUnavailable(e.to_string()))?;
        Ok(CollectAck { record_id, partition_id })
    }

    /// Per-body outcome, in input order. Parseable bodies are appended
    /// together with one sync; if that append fails, all of them report
    /// `STORE_UNAVAILABLE`.
    pub fn batch_collect(&self, bodies: &[&[u8]], received_at: u64) -> Vec<Result<CollectAck, CollectError>> {
        let mut out: Vec<Result<CollectAck, CollectError>> = bodies
            .iter()
            .map(|b| {
                parse_document(b)
                    .map(|_| CollectAck {
                        record_id: 0,
                        partition_id: PartitionId(0),
                    })
                    .map_err(|e| CollectError::MalformedPayload(e.to_string()))
            })
            .collect();
        let valid: Vec<&[u8]> = bodies.iter().zip(&out).filter(|(_, r)| r.is_ok()).map(|(b, _)| *b).collect();
        match self.store.append_batch(&valid, received_at) {
            Ok(acks) => {
                let mut acks = acks.into_iter();
                for slot in out.iter_mut().filter(|r| r.is_ok()) {
                    let (partition_id, record_id) = acks.next().expect("one ack per valid body");
                    *slot = Ok(CollectAck { record_id, partition_id });
                }
            }
            Err(e) => {
                for slot in out.iter_mut().filter(|r| r.is_ok()) {
                    *slot = Err(CollectError::StoreUnavailable(e.to_string()));
                }
            }
        }
        out
    }
}

/// Split a newline-delimited body into documents, skipping blank lines.
pub fn split_ndjson(body: &[u8]) -> Vec<&[u8]> {
    body.split(|&b| b == b'\n')
        .map(|l| l.strip_suffix(b"\r").unwrap_or(l))
        .filter(|l| !l.iter().all(u8::is_ascii_whitespace))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BatchItem {
    Ack(CollectAck),
    Error { error: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResponse {
    pub results: Vec<BatchItem>,
    pub accepted: usize,
    pub rejected: usize,
}

async fn collect(State(c): State<Collector>, body: Bytes) -> Result<Json<CollectAck>, CollectError> {
    let received_at = now_ms();
    tokio::task::spawn_blocking(move || c.collect(&body, received_at))
        .await
        .map_err(|e| CollectError::StoreUnavailable(e.to_string()))?
        .map(Json)
}

async fn collect_batch(State(c): State<Collector>, body: Bytes) -> Response {
    let received_at = now_ms();
    let joined = tokio::task::spawn_blocking(move || c.batch_collect(&split_ndjson(&body), received_at)).await;
    let results = match joined {
        Ok(r) => r,
        Err(e) => return CollectError::StoreUnavailable(e.to_string()).into_response(),
    };
    let unavailable = results.iter().any(|r| matches!(r, Err(CollectError::StoreUnavailable(_))));
    let accepted = results.iter().filter(|r| r.is_ok()).count();
    let resp = BatchResponse {
        rejected: results.len() - accepted,
        accepted,
        results: results
            .into_iter()
            .map(|r| match r {
                Ok(a) => BatchItem::Ack(a),
                Err(e) => BatchItem::Error {
                    error: e.code().to_string(),
                    message: e.to_string(),
                },
            })
            .collect(),
    };
    let status = if unavailable { StatusCode::SERVICE_UNAVAILABLE } else { StatusCode::OK };
    (status, Json(resp)).into_response()
}

pub fn router(collector: Collector) -> Router {
    Router::new()
        .route("/collect", post(collect))
        .route("/collect/batch", post(collect_batch))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(collector)
}
