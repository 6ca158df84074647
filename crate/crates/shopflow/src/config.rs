//! Deployment config: a TOML file, then environment overrides.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub listen: String,
    /// Only `hourly` exists.
    pub partition_scheme: String,
    pub max_segment_bytes: u64,
    pub max_total_bytes: Option<u64>,
    pub sync: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            listen: "127.0.0.1:8080".into(),
            partition_scheme: "hourly".into(),
            max_segment_bytes: 8 << 20,
            max_total_bytes: None,
            sync: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServingConfig {
    pub listen: String,
}

impl Default for ServingConfig {
    fn default() -> Self {
        ServingConfig {
            listen: "127.0.0.1:8081".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrchestratorSection {
    pub listen: String,
    pub workers: usize,
    pub tick_ms: u64,
    pub webhook_url: Option<String>,
    pub serving_url: Option<String>,
    pub enable_probes: bool,
}

impl Default for OrchestratorSection {
    fn default() -> Self {
        OrchestratorSection {
            listen: "127.0.0.1:8082".into(),
            workers: 4,
            tick_ms: 50,
            webhook_url: None,
            serving_url: None,
            enable_probes: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data_dir: PathBuf,
    /// DAG spec file; the built-in explode → sessionize DAG when absent.
    pub dag: Option<PathBuf>,
    pub suites_dir: PathBuf,
    pub flows_dir: PathBuf,
    pub ingest: IngestConfig,
    pub serving: ServingConfig,
    pub orchestrator: OrchestratorSection,
    /// Relative paths resolve against this; the config file's directory.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            data_dir: "data".into(),
            dag: None,
            suites_dir: "config/suites".into(),
            flows_dir: "config/flows".into(),
            ingest: IngestConfig::default(),
            serving: ServingConfig::default(),
            orchestrator: OrchestratorSection::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl Config {
    /// Read `path` (or start from defaults) and apply process environment.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Config> {
        let mut cfg = match path {
            Some(p) => Self::from_file(p)?,
            None => Config::default(),
        };
        cfg.apply_env(&std::env::vars().collect())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> anyhow::Result<Config> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: Config = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn apply_env(&mut self, env: &HashMap<String, String>) -> anyhow::Result<()> {
        let get = |k: &str| env.get(k).filter(|v| !v.is_empty()).cloned();
        if let Some(v) = get("SHOPFLOW_DATA_DIR") {
            self.data_dir = v.into();
        }
        if let Some(v) = get("SHOPFLOW_INGEST_LISTEN") {
            self.ingest.listen = v;
        }
        if let Some(v) = get("SHOPFLOW_SERVING_LISTEN") {
            self.serving.listen = v;
        }
        if let Some(v) = get("SHOPFLOW_ORCHESTRATOR_LISTEN") {
            self.orchestrator.listen = v;
        }
        if let Some(v) = get("SHOPFLOW_WEBHOOK_URL") {
            self.orchestrator.webhook_url = Some(v);
        }
        if let Some(v) = get("SHOPFLOW_SERVING_URL") {
            self.orchestrator.serving_url = Some(v);
        }
        Ok(())
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.ingest.partition_scheme != "hourly" {
            bail!("unsupported partition_scheme `{}` (only `hourly`)", self.ingest.partition_scheme);
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn data(&self) -> PathBuf {
        self.resolve(&self.data_dir)
    }

    pub fn raw_dir(&self) -> PathBuf {
        self.data().join("raw")
    }

    pub fn tables_dir(&self) -> PathBuf {
        self.data().join("tables")
    }

    pub fn artifacts_dir(&self) -> PathBuf {
        self.data().join("artifacts")
    }

    pub fn state_dir(&self) -> PathBuf {
        self.data().join("orchestrator")
    }
}
