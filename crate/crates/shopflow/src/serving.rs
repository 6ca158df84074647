//! Model server with staged loading and atomic activation.
//!
//! Requests read the active model through an [`ArcSwapOption`]; activation
//! swaps the pointer, so in-flight requests finish on the model they
//! started with and nothing ever waits on a swap.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use arc_swap::ArcSwapOption;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use shopflow_core::recsys::{behavioral_checklist, TransitionModel};

use crate::artifacts::{ArtifactError, ArtifactStore, EvalSummary};
use crate::fsutil::now_ms;
use crate::server::error_response;

pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ServeError {
    #[error("UNKNOWN_VERSION: {0}")]
    UnknownVersion(String),
    #[error("CORRUPT_ARTIFACT: {0}")]
    CorruptArtifact(String),
    #[error("CHECKLIST_FAIL: {0}")]
    ChecklistFail(String),
    #[error("NOTHING_STAGED")]
    NothingStaged,
    #[error("NO_MODEL")]
    NoModel,
    #[error("BAD_REQUEST: {0}")]
    BadRequest(String),
    #[error("IO: {0}")]
    Io(String),
}

impl ServeError {
    pub fn code(&self) -> &'static str {
        match self {
            ServeError::UnknownVersion(_) => "UNKNOWN_VERSION",
            ServeError::CorruptArtifact(_) => "CORRUPT_ARTIFACT",
            ServeError::ChecklistFail(_) => "CHECKLIST_FAIL",
            ServeError::NothingStaged => "NOTHING_STAGED",
            ServeError::NoModel => "NO_MODEL",
            ServeError::BadRequest(_) => "BAD_REQUEST",
            ServeError::Io(_) => "IO",
        }
    }

    fn status(&self) -> StatusCode {
        match self {
            ServeError::UnknownVersion(_) => StatusCode::NOT_FOUND,
            ServeError::CorruptArtifact(_) | ServeError::ChecklistFail(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServeError::NothingStaged => StatusCode::CONFLICT,
            ServeError::NoModel => StatusCode::SERVICE_UNAVAILABLE,
            ServeError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServeError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServeError {
    fn into_response(self) -> Response {
        error_response(self.status(), self.code(), self.to_string())
    }
}

impl From<ArtifactError> for ServeError {
    fn from(e: ArtifactError) -> Self {
        match e {
            ArtifactError::UnknownVersion(v) => ServeError::UnknownVersion(v),
            ArtifactError::CorruptArtifact { .. } => ServeError::CorruptArtifact(e.to_string()),
            ArtifactError::PackageBlocked(_) | ArtifactError::Io(_) => ServeError::Io(e.to_string()),
        }
    }
}

pub struct LoadedModel {
    pub version: String,
    pub model: TransitionModel,
    pub eval: EvalSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub items: Vec<String>,
    pub model_version: String,
    pub served_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub active_version: Option<String>,
}

pub struct ServingState {
    artifacts: ArtifactStore,
    active: ArcSwapOption<LoadedModel>,
    staged: Mutex<Option<Arc<LoadedModel>>>,
}

impl ServingState {
    pub fn new(artifacts: ArtifactStore) -> Self {
        ServingState {
            artifacts,
            active: ArcSwapOption::empty(),
            staged: Mutex::new(None),
        }
    }

    /// Read, verify and re-check an artifact, then stage it.
    pub fn load(&self, version: &str) -> Result<String, ServeError> {
        let a = self.artifacts.load(version)?;
        let checklist = behavioral_checklist(&a.model);
        if !checklist.all_passed() {
            let names: Vec<&str> = checklist.failures().map(|c| c.name.as_str()).collect();
            return Err(ServeError::ChecklistFail(names.join(", ")));
        }
        *self.staged.lock().unwrap() = Some(Arc::new(LoadedModel {
            version: a.version.clone(),
            model: a.model,
            eval: a.eval,
        }));
        Ok(a.version)
    }

    pub fn activate(&self) -> Result<String, ServeError> {
        let staged = self.staged.lock().unwrap().take().ok_or(ServeError::NothingStaged)?;
        let v = staged.version.clone();
        self.active.store(Some(staged));
        Ok(v)
    }

    /// `load` followed by `activate`.
    pub fn deploy(&self, version: &str) -> Result<String, ServeError> {
        self.load(version)?;
        self.activate()
    }

    pub fn active(&self) -> Option<Arc<LoadedModel>> {
        self.active.load_full()
    }

    pub fn active_version(&self) -> Option<String> {
        self.active.load().as_ref().map(|m| m.version.clone())
    }

    pub fn staged_version(&self) -> Option<String> {
        self.staged.lock().unwrap().as_ref().map(|m| m.version.clone())
    }

    pub fn serve(&self, sku: &str, k: usize) -> Result<Recommendation, ServeError> {
        if sku.is_empty() {
            return Err(ServeError::BadRequest("missing sku".into()));
        }
        if k == 0 {
            return Err(ServeError::BadRequest("k must be at least 1".into()));
        }
        let guard = self.active.load();
        let m = guard.as_ref().ok_or(ServeError::NoModel)?;
        let items = m.model.recommend(sku, k).map_err(|_| ServeError::NoModel)?;
        Ok(Recommendation {
            items: items.into_iter().map(String::from).collect(),
            model_version: m.version.clone(),
            served_at: now_ms(),
        })
    }

    pub fn health(&self) -> Health {
        let active_version = self.active_version();
        Health {
            status: if active_version.is_some() { "ok" } else { "no_model" }.to_string(),
            active_version,
        }
    }
}

#[derive(Deserialize)]
struct LoadBody {
    version: String,
}

async fn recommend(State(s): State<Arc<ServingState>>, Query(q): Query<HashMap<String, String>>) -> Result<Json<Recommendation>, ServeError> {
    let sku = q.get("sku").map(String::as_str).unwrap_or("");
    let k = match q.get("k") {
        None => DEFAULT_K,
        Some(raw) => raw.parse::<usize>().map_err(|_| ServeError::BadRequest(format!("k must be a positive integer, got `{raw}`")))?,
    };
    s.serve(sku, k).map(Json)
}

async fn admin_load(State(s): State<Arc<ServingState>>, body: Result<Json<LoadBody>, axum::extract::rejection::JsonRejection>) -> Result<Json<serde_json::Value>, ServeError> {
    let Json(body) = body.map_err(|e| ServeError::BadRequest(e.body_text()))?;
    let v = tokio::task::spawn_blocking(move || s.load(&body.version))
        .await
        .map_err(|e| ServeError::Io(e.to_string()))??;
    Ok(Json(serde_json::json!({ "staged_version": v })))
}

async fn admin_activate(State(s): State<Arc<ServingState>>) -> Result<Json<serde_json::Value>, ServeError> {
    let v = s.activate()?;
    Ok(Json(serde_json::json!({ "active_version": v })))
}

async fn health(State(s): State<Arc<ServingState>>) -> Json<Health> {
    Json(s.health())
}

pub fn router(state: Arc<ServingState>) -> Router {
    Router::new()
        .route("/recommend", get(recommend))
        .route("/admin/load", post(admin_load))
        .route("/admin/activate", post(admin_activate))
        .route("/health", get(health))
        .with_state(state)
}
