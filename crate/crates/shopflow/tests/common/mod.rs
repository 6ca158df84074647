//! Helpers shared by the integration and acceptance targets.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::HeaderMap;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::Value;
use shopflow::config::Config;
use shopflow::server::{self, ServerHandle};

/// Received webhook calls: `Idempotency-Key` header and JSON body.
pub type Captured = Arc<Mutex<Vec<(Option<String>, Value)>>>;

/// A server that records every POST to `/hook`.
pub fn webhook_sink() -> (ServerHandle, Captured) {
    let seen: Captured = Arc::default();
    async fn hook(State(seen): State<Captured>, headers: HeaderMap, Json(body): Json<Value>) -> &'static str {
        let key = headers.get("idempotency-key").and_then(|v| v.to_str().ok()).map(String::from);
        seen.lock().unwrap().push((key, body));
        "ok"
    }
    let router = Router::new().route("/hook", post(hook)).with_state(seen.clone());
    (server::spawn(router, "127.0.0.1:0").expect("bind webhook sink"), seen)
}

pub fn shipped_config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("config")
}

/// The shipped config, with data under `data_dir` and ephemeral ports.
pub fn config_in(data_dir: &Path) -> Config {
    let mut cfg = Config::from_file(&shipped_config_dir().join("shopflow.toml")).expect("shipped config parses");
    cfg.data_dir = data_dir.to_path_buf();
    cfg.ingest.listen = "127.0.0.1:0".into();
    cfg.serving.listen = "127.0.0.1:0".into();
    cfg.orchestrator.listen = "127.0.0.1:0".into();
    cfg
}

pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(30)))
        .http_status_as_error(false)
        .build()
        .into()
}

/// `(status, json body)` of a GET.
pub fn get_json(agent: &ureq::Agent, url: &str) -> (u16, Value) {
    let mut resp = agent.get(url).call().expect("request completes");
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_json().unwrap_or(Value::Null))
}

/// `(status, json body)` of a POST with a JSON body.
pub fn post_json(agent: &ureq::Agent, url: &str, body: &Value) -> (u16, Value) {
    let mut resp = agent.post(url).send_json(body).expect("request completes");
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_json().unwrap_or(Value::Null))
}

/// Generator output grouped into item sequences, in session order.
pub fn sequences(events: &[shopflow_core::datagen::Generated]) -> Vec<shopflow_core::transform::sessionize::SessionSequence> {
    let mut by_session: std::collections::BTreeMap<usize, Vec<&shopflow_core::datagen::Generated>> = Default::default();
    for g in events {
        by_session.entry(g.session).or_default().push(g);
    }
    by_session
        .into_values()
        .map(|mut s| {
            s.sort_by_key(|g| g.step);
            let timestamps: Vec<i64> = s.iter().map(|g| g.event.ts).collect();
            shopflow_core::transform::sessionize::SessionSequence {
                session_id: s[0].event.session_id.clone(),
                split_index: 0,
                items: s.iter().map(|g| g.event.sku.clone().unwrap_or_default()).collect(),
                start_ts: timestamps[0],
                end_ts: *timestamps.last().unwrap(),
                timestamps,
            }
        })
        .collect()
}

/// Train on `n_sessions` from the skewed preset and package the result.
pub fn package_model(store: &shopflow::artifacts::ArtifactStore, catalog: usize, n_sessions: usize, seed: u64) -> (String, shopflow_core::recsys::TransitionModel) {
    use shopflow_core::datagen::{generate, Preset, ShopperModel};
    let model = ShopperModel::preset(Preset::Skewed, catalog, seed).unwrap();
    let events = generate(&model, n_sessions, 1_704_067_200_000).unwrap();
    let out = shopflow::training::train(&sequences(&events), &shopflow::training::TrainConfig::default()).unwrap();
    let packaged = store.package(&out.model, &out.eval, &out.checklist, &shopflow::artifacts::Lineage::default()).unwrap();
    (packaged.version, out.model)
}
