//! Task runners that drive the pipeline stages from a flow.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};
use shopflow_core::flow::{Action, FlowSpec};
use shopflow_core::quality::{default_suite, Gate, Suite};
use shopflow_core::transform::sessionize::sequences_from_table;
use shopflow_core::transform::TransformDag;

use crate::artifacts::{ArtifactStore, Lineage};
use crate::fsutil::now_ms;
use crate::orchestrator::{ProbeRunner, Runners, TaskContext, TaskRunner};
use crate::quality::{load_suite, run_on_store};
use crate::rawstore::RawStore;
use crate::serving::ServingState;
use crate::tables::{run_node, TableStore};
use crate::training::{train, TrainConfig};

/// Shared handles for pipeline tasks.
pub struct Pipeline {
    pub raw: Arc<RawStore>,
    pub tables: Arc<TableStore>,
    pub dag: TransformDag,
    pub artifacts: Arc<ArtifactStore>,
    /// Suite files are looked up here by name (`<name>.json`).
    pub suites_dir: PathBuf,
    /// Serving process for `serving_deploy`, unless the task names one.
    pub serving_endpoint: Option<String>,
    /// In-process server, used when no endpoint is known.
    pub serving: Option<Arc<ServingState>>,
}

/// Row floor of the built-in default suite.
pub const DEFAULT_MIN_ROWS: u64 = 100;
/// Freshness bound of the built-in default suite: two hours.
pub const DEFAULT_MAX_AGE_MS: u64 = 2 * 3_600_000;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

struct TransformRunner(Arc<Pipeline>);

impl TaskRunner for TransformRunner {
    /// Params: `node`, optional `full_rebuild`.
    fn run(&self, ctx: &TaskContext) -> Result<Value, String> {
        let p = &self.0;
        let node = ctx.param_str("node").ok_or("transform_node needs a `node` param")?;
        let full = ctx.params.get("full_rebuild").and_then(Value::as_bool).unwrap_or(false);
        let run = run_node(&p.dag, node, &p.raw, &p.tables, full).map_err(err)?;
        let tables: BTreeMap<&str, Value> = run
            .manifests
            .iter()
            .map(|m| {
                (
                    m.table.as_str(),
                    json!({ "row_count": m.row_count, "content_hash": m.content_hash, "node_version": m.node_version }),
                )
            })
            .collect();
        Ok(json!({ "node": run.node, "mode": run.mode, "tables": tables }))
    }
}

struct QualityRunner(Arc<Pipeline>);

impl TaskRunner for QualityRunner {
    /// Params: `suite` (file name under the suites dir) or `suite_inline`,
    /// optional `now_ms` to pin the evaluation clock. A blocked gate fails
    /// the task.
    fn run(&self, ctx: &TaskContext) -> Result<Value, String> {
        let p = &self.0;
        let suite: Suite = match (ctx.params.get("suite_inline"), ctx.param_str("suite")) {
            (Some(inline), _) => serde_json::from_value(inline.clone()).map_err(err)?,
            (None, Some(name)) => {
                let path = p.suites_dir.join(format!("{name}.json"));
                if !path.exists() && name == "default" {
                    default_suite(DEFAULT_MIN_ROWS, DEFAULT_MAX_AGE_MS)
                } else {
                    load_suite(&path).map_err(err)?
                }
            }
            (None, None) => return Err("quality_suite needs `suite` or `suite_inline`".into()),
        };
        let now = ctx.param_u64("now_ms").unwrap_or_else(now_ms);
        let run = run_on_store(&p.tables, &suite, now).map_err(err)?;
        match &run.file.gate {
            Gate::Pass => Ok(json!({
                "suite": suite.name,
                "gate": run.file.gate,
                "report_hash": run.file.report_hash,
                "report_path": run.path,
                "report": run.file.report,
            })),
            Gate::Block { reasons } => Err(format!("QUALITY_GATE_BLOCKED: {}", reasons.join("; "))),
        }
    }
}

struct RecsysRunner(Arc<Pipeline>);

impl TaskRunner for RecsysRunner {
    /// Params: `sessions` table (default `sessions`), `alpha_grid`,
    /// `split_ts`, `split_quantile`, `validation_fraction`.
    fn run(&self, ctx: &TaskContext) -> Result<Value, String> {
        let p = &self.0;
        let table = ctx.param_str("sessions").unwrap_or("sessions");
        let (manifest, sessions) = p.tables.read(table).map_err(err)?.ok_or_else(|| format!("STALE_INPUT: table `{table}` has no manifest"))?;
        let mut cfg = TrainConfig::default();
        if let Some(g) = ctx.params.get("alpha_grid") {
            cfg.alpha_grid = serde_json::from_value(g.clone()).map_err(err)?;
        }
        cfg.split_ts = ctx.params.get("split_ts").and_then(Value::as_i64);
        if let Some(q) = ctx.params.get("split_quantile").and_then(Value::as_f64) {
            cfg.split_quantile = q;
        }
        if let Some(v) = ctx.params.get("validation_fraction").and_then(Value::as_f64) {
            cfg.validation_fraction = v;
        }
        let seqs = sequences_from_table(&sessions);
        let out = train(&seqs, &cfg).map_err(err)?;
        let lineage = Lineage {
            raw_watermarks: manifest.input_watermarks.clone(),
            node_versions: p.dag.nodes.iter().map(|n| (n.name.clone(), n.version)).collect(),
            sessions_hash: Some(manifest.content_hash.clone()),
            suite_report_hash: ctx.upstream_field("report_hash").and_then(Value::as_str).map(String::from),
            flow_run_id: Some(ctx.run_id.clone()),
            created_at: 0,
        };
        let packaged = p.artifacts.package(&out.model, &out.eval, &out.checklist, &lineage).map_err(err)?;
        Ok(json!({
            "version": packaged.version,
            "reused": packaged.reused,
            "best_alpha": out.eval.best_alpha,
            "n_test_cases": out.eval.report.n_test_cases,
            "recall_at_k": out.eval.report.recall_at_k,
            "baseline_recall_at_k": out.eval.report.baseline.recall_at_k,
        }))
    }
}

struct DeployRunner(Arc<Pipeline>);

impl TaskRunner for DeployRunner {
    /// Params: `version` (default: the upstream train output), optional
    /// `endpoint` of a serving process.
    fn run(&self, ctx: &TaskContext) -> Result<Value, String> {
        let version = ctx
            .param_str("version")
            .or_else(|| ctx.upstream_field("version").and_then(Value::as_str))
            .ok_or("serving_deploy needs a version")?
            .to_string();
        let endpoint = ctx.param_str("endpoint").or(self.0.serving_endpoint.as_deref());
        if let Some(endpoint) = endpoint {
            let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(Duration::from_secs(30))).build().into();
            let base = endpoint.trim_end_matches('/');
            agent.post(&format!("{base}/admin/load")).send_json(json!({ "version": version })).map_err(err)?;
            agent.post(&format!("{base}/admin/activate")).send_empty().map_err(err)?;
        } else {
            let serving = self.0.serving.as_ref().ok_or("no serving endpoint or in-process server configured")?;
            serving.deploy(&version).map_err(err)?;
        }
        Ok(json!({ "active_version": version }))
    }
}

/// Runners for every pipeline action; the probe only when asked for.
pub fn runners(p: Arc<Pipeline>, with_probe: bool) -> Runners {
    let mut r: Runners = HashMap::new();
    r.insert(Action::TransformNode, Arc::new(TransformRunner(p.clone())));
    r.insert(Action::QualitySuite, Arc::new(QualityRunner(p.clone())));
    r.insert(Action::RecsysStep, Arc::new(RecsysRunner(p.clone())));
    r.insert(Action::ServingDeploy, Arc::new(DeployRunner(p)));
    if with_probe {
        r.insert(Action::ShellProbe, Arc::new(ProbeRunner));
    }
    r
}

/// The shipped `nightly_train` flow, identical to `config/flows/nightly_train.json`.
pub fn nightly_train() -> FlowSpec {
    serde_json::from_str(include_str!("../config/flows/nightly_train.json")).expect("shipped flow parses")
}
