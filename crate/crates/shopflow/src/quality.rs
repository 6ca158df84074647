//! Running expectation suites against materialized tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shopflow_core::quality::{gate, run_suite, Gate, QualityError, Status, Suite, SuiteReport, TableInput};
use shopflow_core::table::Table;

use crate::fsutil::write_atomic;
use crate::tables::{TableManifest, TableStore, TransformError, REPORTS_DIR};

#[derive(Debug, thiserror::Error)]
pub enum QualityRunError {
    #[error("{0}")]
    Quality(#[from] QualityError),
    #[error(transparent)]
    Table(#[from] TransformError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What lands in `<tables_root>/_reports/<suite>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub report: SuiteReport,
    pub gate: Gate,
    pub report_hash: String,
}

#[derive(Debug, Clone)]
pub struct QualityRun {
    pub file: ReportFile,
    pub path: PathBuf,
}

pub fn load_suite(path: &Path) -> anyhow::Result<Suite> {
    let suite: Suite = serde_json::from_slice(&fs::read(path)?)?;
    suite.validate()?;
    Ok(suite)
}

/// Evaluate `suite` over the current tables and persist the report.
pub fn run_on_store(tables: &TableStore, suite: &Suite, now_ms: u64) -> Result<QualityRun, QualityRunError> {
    suite.validate()?;
    let mut loaded: BTreeMap<String, (TableManifest, Table)> = BTreeMap::new();
    for name in suite.tables() {
        match tables.read(&name)? {
            Some(t) => {
                loaded.insert(name, t);
            }
            None => return Err(QualityError::UnknownTable(name).into()),
        }
    }
    let inputs: BTreeMap<String, TableInput<'_>> = loaded
        .iter()
        .map(|(k, (m, t))| {
            (
                k.clone(),
                TableInput {
                    table: t,
                    content_hash: &m.content_hash,
                },
            )
        })
        .collect();
    let report = run_suite(suite, &inputs, now_ms)?;
    let file = ReportFile {
        gate: gate(&report),
        report_hash: report.hash(),
        report,
    };
    let dir = tables.root().join(REPORTS_DIR);
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{}.json", suite.name));
    write_atomic(&path, &serde_json::to_vec_pretty(&file).expect("report serializes"), true)?;
    Ok(QualityRun { file, path })
}

/// Plain-text rendering for terminals.
pub fn render(file: &ReportFile) -> String {
    let mut out = String::new();
    let r = &file.report;
    let _ = writeln!(out, "suite {}: {}", r.suite, if r.overall == Status::Pass { "PASS" } else { "FAIL" });
    for c in &r.results {
        let mark = if c.status == Status::Pass { "pass" } else { "FAIL" };
        let _ = writeln!(out, "  [{mark}] {}", c.describe());
    }
    for w in &r.warnings {
        let _ = writeln!(out, "  warning: {w}");
    }
    match &file.gate {
        Gate::Pass => out.push_str("gate: pass\n"),
        Gate::Block { reasons } => {
            let _ = writeln!(out, "gate: block ({} failed)", reasons.len());
        }
    }
    out
}
