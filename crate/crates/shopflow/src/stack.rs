//! Wiring: open every store named by a [`Config`] and start an orchestrator
//! over them.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use anyhow::Context;
use shopflow_core::flow::FlowSpec;

use crate::artifacts::ArtifactStore;
use crate::config::Config;
use crate::orchestrator::{Orchestrator, OrchestratorConfig};
use crate::pipeline::{nightly_train, runners, Pipeline};
use crate::rawstore::{RawStore, RawStoreConfig};
use crate::serving::ServingState;
use crate::tables::{default_dag, load_dag, TableStore};

/// How the raw store is opened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawAccess {
    /// This process appends; recovery runs at open.
    Writer,
    /// Another process owns the store; only read it.
    Reader,
}

pub fn open_raw(cfg: &Config, access: RawAccess) -> anyhow::Result<Arc<RawStore>> {
    let root = cfg.raw_dir();
    Ok(Arc::new(match access {
        RawAccess::Writer => RawStore::open(RawStoreConfig {
            max_segment_bytes: cfg.ingest.max_segment_bytes,
            max_total_bytes: cfg.ingest.max_total_bytes,
            sync: cfg.ingest.sync,
            ..RawStoreConfig::new(root)
        })
        .context("opening raw store")?,
        RawAccess::Reader => {
            fs::create_dir_all(&root)?;
            RawStore::reader(root)
        }
    }))
}

/// Flow specs in `dir` (`*.json`), sorted by file name.
pub fn load_flows(dir: &Path) -> anyhow::Result<Vec<FlowSpec>> {
    let mut paths: Vec<_> = match fs::read_dir(dir) {
        Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "json")).collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text).with_context(|| format!("parsing flow {}", p.display()))
        })
        .collect()
}

pub struct Stack {
    pub cfg: Config,
    pub raw: Arc<RawStore>,
    pub tables: Arc<TableStore>,
    pub serving: Arc<ServingState>,
    pub pipeline: Arc<Pipeline>,
    pub orchestrator: Arc<Orchestrator>,
}

impl Stack {
    /// Open stores, start the orchestrator and register the flows found in
    /// the flows dir, plus the built-in `nightly_train` if none replaces it.
    pub fn open(cfg: Config, access: RawAccess) -> anyhow::Result<Stack> {
        let raw = open_raw(&cfg, access)?;
        let tables = Arc::new(TableStore::open(cfg.tables_dir())?);
        let dag = match &cfg.dag {
            Some(p) => load_dag(&cfg.resolve(p))?,
            None => default_dag(),
        };
        let serving = Arc::new(ServingState::new(ArtifactStore::new(cfg.artifacts_dir())));
        let pipeline = Arc::new(Pipeline {
            raw: raw.clone(),
            tables: tables.clone(),
            dag,
            artifacts: Arc::new(ArtifactStore::new(cfg.artifacts_dir())),
            suites_dir: cfg.resolve(&cfg.suites_dir),
            serving_endpoint: cfg.orchestrator.serving_url.clone(),
            serving: Some(serving.clone()),
        });
        let ocfg = OrchestratorConfig {
            workers: cfg.orchestrator.workers,
            tick_ms: cfg.orchestrator.tick_ms,
            webhook_url: cfg.orchestrator.webhook_url.clone(),
            ..OrchestratorConfig::new(cfg.state_dir())
        };
        let orchestrator = Arc::new(Orchestrator::start(ocfg, runners(pipeline.clone(), cfg.orchestrator.enable_probes))?);
        let mut flows = load_flows(&cfg.resolve(&cfg.flows_dir))?;
        if !flows.iter().any(|f| f.name == "nightly_train") {
            flows.push(nightly_train());
        }
        for f in flows {
            let id = f.name.clone();
            orchestrator.register(f).with_context(|| format!("registering flow {id}"))?;
        }
        Ok(Stack {
            cfg,
            raw,
            tables,
            serving,
            pipeline,
            orchestrator,
        })
    }
}
