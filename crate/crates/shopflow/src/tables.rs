//! Materialized tables on disk and the DAG executor that produces them.
//!
//! ```text
//! <tables_root>/<table>/manifest.json
//! <tables_root>/<table>/rows-<hash prefix>.ndjson
//! ```
//!
//! A table is replaced by writing a new rows file and then swapping the
//! manifest, so readers holding the old manifest still find complete data.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use shopflow_core::hash::sha256_hex;
use shopflow_core::raw::Watermarks;
use shopflow_core::table::Table;
use shopflow_core::transform::{self, explode, DagError, OpSpec, TransformDag, TransformNode, RAW};

use crate::fsutil::{now_ms, write_atomic};
use crate::rawstore::{RawStore, RawStoreError};

pub const MANIFEST: &str = "manifest.json";
/// Directory under the tables root holding quality reports.
pub const REPORTS_DIR: &str = "_reports";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableManifest {
    pub table: String,
    pub node: String,
    pub node_version: u32,
    pub row_count: u64,
    pub columns: Vec<String>,
    /// Raw offsets the table reflects; propagated through derived nodes.
    pub input_watermarks: Watermarks,
    /// Content hash of each non-raw input at build time.
    pub input_hashes: BTreeMap<String, String>,
    pub content_hash: String,
    pub data_file: String,
    pub materialized_at: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum TransformError {
    #[error("STALE_INPUT: node `{node}` needs table `{input}`, which has no manifest")]
    StaleInput { node: String, input: String },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("table `{table}` is corrupt: {detail}")]
    CorruptTable { table: String, detail: String },
    #[error("{0}")]
    Dag(#[from] DagError),
    #[error(transparent)]
    Raw(#[from] RawStoreError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub struct TableStore {
    root: PathBuf,
    sync: bool,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl TableStore {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(TableStore {
            root,
            sync: true,
            locks: Mutex::new(HashMap::new()),
        })
    }

    /// Skip fsync; for tests and throwaway runs.
    pub fn without_sync(mut self) -> Self {
        self.sync = false;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, table: &str) -> PathBuf {
        self.root.join(table)
    }

    pub fn manifest(&self, table: &str) -> Result<Option<TableManifest>, TransformError> {
        match fs::read(self.dir(table).join(MANIFEST)) {
            Ok(b) => serde_json::from_slice(&b).map(Some).map_err(|e| TransformError::CorruptTable {
                table: table.to_string(),
                detail: e.to_string(),
            }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Load a table and check its bytes against the manifest hash.
    pub fn read(&self, table: &str) -> Result<Option<(TableManifest, Table)>, TransformError> {
        // A concurrent swap may remove the rows file after we read the
        // manifest; the second attempt sees the new manifest.
        for attempt in 0..2 {
            let Some(m) = self.manifest(table)? else {
                return Ok(None);
            };
            let bytes = match fs::read(self.dir(table).join(&m.data_file)) {
                Ok(b) => b,
                Err(e) if e.kind() == io::ErrorKind::NotFound && attempt == 0 => continue,
                Err(e) => return Err(e.into()),
            };
            let corrupt = |detail: String| TransformError::CorruptTable {
                table: table.to_string(),
                detail,
            };
            if sha256_hex(&bytes) != m.content_hash {
                return Err(corrupt("content hash mismatch".into()));
            }
            let t = Table::from_ndjson(m.columns.clone(), &bytes).map_err(|e| corrupt(format!("{e:?}")))?;
            return Ok(Some((m, t)));
        }
        unreachable!("second attempt returns")
    }

    /// Table names that currently have a manifest.
    pub fn tables(&self) -> Result<Vec<String>, TransformError> {
        let mut out = Vec::new();
        for e in fs::read_dir(&self.root)? {
            let e = e?;
            let name = e.file_name().to_string_lossy().into_owned();
            if e.file_type()?.is_dir() && !name.starts_with('_') && e.path().join(MANIFEST).exists() {
                out.push(name);
            }
        }
        out.sort();
        Ok(out)
    }

    fn write(
        &self,
        table: &str,
        data: &Table,
        node: &TransformNode,
        input_watermarks: Watermarks,
        input_hashes: BTreeMap<String, String>,
    ) -> Result<TableManifest, TransformError> {
        let dir = self.dir(table);
        fs::create_dir_all(&dir)?;
        let bytes = data.to_ndjson();
        let content_hash = sha256_hex(&bytes);
        let data_file = format!("rows-{}.ndjson", &content_hash[..16]);
        let path = dir.join(&data_file);
        if !path.exists() {
            write_atomic(&path, &bytes, self.sync)?;
        }
        let m = TableManifest {
            table: table.to_string(),
            node: node.name.clone(),
            node_version: node.version,
            row_count: data.len() as u64,
            columns: data.columns.clone(),
            input_watermarks,
            input_hashes,
            content_hash,
            data_file: data_file.clone(),
            materialized_at: now_ms(),
        };
        write_atomic(&dir.join(MANIFEST), &serde_json::to_vec_pretty(&m).expect("manifest serializes"), self.sync)?;
        for e in fs::read_dir(&dir)? {
            let name = e?.file_name().to_string_lossy().into_owned();
            if name.starts_with("rows-") && name != data_file {
                let _ = fs::remove_file(dir.join(name));
            }
        }
        Ok(m)
    }

    fn node_lock(&self, node: &str) -> Arc<Mutex<()>> {
        self.locks.lock().unwrap().entry(node.to_string()).or_default().clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Materialization {
    /// Inputs unchanged; existing tables kept.
    Unchanged,
    /// Only raw records past the stored watermarks were consumed.
    Incremental,
    /// Output recomputed from its full input.
    Rebuilt,
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeRun {
    pub node: String,
    pub mode: Materialization,
    pub manifests: Vec<TableManifest>,
}

/// Execute one node.
///
/// Explode is incremental: it consumes raw records past the watermarks of
/// its existing outputs and merges the new rows. Every other node is
/// recomputed when its input's content hash or its own version changed.
/// `full_rebuild` ignores existing outputs.
pub fn materialize(node: &TransformNode, raw: &RawStore, tables: &TableStore, full_rebuild: bool) -> Result<NodeRun, TransformError> {
    let lock = tables.node_lock(&node.name);
    let _guard = lock.lock().unwrap();
    match &node.op {
        OpSpec::Explode { rejects } => materialize_explode(node, rejects, raw, tables, full_rebuild),
        op => {
            let input = &node.inputs[0];
            let Some((im, input_table)) = tables.read(input)? else {
                return Err(TransformError::StaleInput {
                    node: node.name.clone(),
                    input: input.clone(),
                });
            };
            if !full_rebuild {
                if let Some(m) = tables.manifest(&node.output)? {
                    let same_input = m.input_hashes.get(input) == Some(&im.content_hash);
                    if m.node == node.name && m.node_version == node.version && same_input {
                        return Ok(NodeRun {
                            node: node.name.clone(),
                            mode: Materialization::Unchanged,
                            manifests: vec![m],
                        });
                    }
                }
            }
            let out = transform::apply(op, &input_table).expect("non-explode op");
            let hashes = BTreeMap::from([(input.clone(), im.content_hash.clone())]);
            let m = tables.write(&node.output, &out, node, im.input_watermarks.clone(), hashes)?;
            Ok(NodeRun {
                node: node.name.clone(),
                mode: Materialization::Rebuilt,
                manifests: vec![m],
            })
        }
    }
}

fn materialize_explode(node: &TransformNode, rejects: &str, raw: &RawStore, tables: &TableStore, full_rebuild: bool) -> Result<NodeRun, TransformError> {
    let fresh = || {
        let empty = explode::Exploded {
            interactions: Vec::new(),
            rejects: Vec::new(),
        };
        empty.into_tables()
    };
    // Both outputs must agree on what they consumed; otherwise start over.
    let base = if full_rebuild {
        None
    } else {
        match (tables.read(&node.output)?, tables.read(rejects)?) {
            (Some((mi, ti)), Some((mr, tr)))
                if mi.node == node.name
                    && mr.node == node.name
                    && mi.node_version == node.version
                    && mr.node_version == node.version
                    && mi.input_watermarks == mr.input_watermarks =>
            {
                Some((mi, ti, mr, tr))
            }
            _ => None,
        }
    };
    let consumed = base.as_ref().map(|b| b.0.input_watermarks.clone()).unwrap_or_default();
    let (records, next) = raw.replay_after(&consumed)?;
    if let Some((mi, _, mr, _)) = &base {
        if records.is_empty() {
            return Ok(NodeRun {
                node: node.name.clone(),
                mode: Materialization::Unchanged,
                manifests: vec![mi.clone(), mr.clone()],
            });
        }
    }
    let incremental = base.is_some();
    let (mut ti, mut tr) = match base {
        Some((_, ti, _, tr)) => (ti, tr),
        None => fresh(),
    };
    let (ni, nr) = explode::explode(records.iter()).into_tables();
    ti.rows.extend(ni.rows);
    tr.rows.extend(nr.rows);
    ti.canonicalize();
    tr.canonicalize();
    // Rejects first: a crash between the two writes leaves mismatched
    // watermarks, which forces a clean rebuild next time.
    let mr = tables.write(rejects, &tr, node, next.clone(), BTreeMap::new())?;
    let mi = tables.write(&node.output, &ti, node, next, BTreeMap::new())?;
    Ok(NodeRun {
        node: node.name.clone(),
        mode: if incremental {
            Materialization::Incremental
        } else {
            Materialization::Rebuilt
        },
        manifests: vec![mi, mr],
    })
}

/// Run the whole DAG in plan order, or just what `target` needs.
pub fn run_dag(dag: &TransformDag, raw: &RawStore, tables: &TableStore, target: Option<&str>, full_rebuild: bool) -> Result<Vec<NodeRun>, TransformError> {
    let plan = match target {
        Some(t) => {
            if dag.node(t).is_none() {
                return Err(TransformError::UnknownNode(t.to_string()));
            }
            dag.plan_for(t)?
        }
        None => dag.plan()?,
    };
    plan.into_iter().map(|n| materialize(n, raw, tables, full_rebuild)).collect()
}

/// Materialize a single node by name, assuming its inputs are current.
pub fn run_node(dag: &TransformDag, name: &str, raw: &RawStore, tables: &TableStore, full_rebuild: bool) -> Result<NodeRun, TransformError> {
    dag.validate()?;
    let node = dag.node(name).ok_or_else(|| TransformError::UnknownNode(name.to_string()))?;
    materialize(node, raw, tables, full_rebuild)
}

pub fn load_dag(path: &Path) -> anyhow::Result<TransformDag> {
    let dag: TransformDag = serde_json::from_slice(&fs::read(path)?)?;
    dag.validate()?;
    Ok(dag)
}

/// The shipped DAG: raw → interactions (+ rejects) → sessions.
pub fn default_dag() -> TransformDag {
    TransformDag {
        nodes: vec![
            TransformNode {
                name: "explode".into(),
                version: 1,
                inputs: vec![RAW.into()],
                op: OpSpec::Explode { rejects: "rejects".into() },
                output: "interactions".into(),
            },
            TransformNode {
                name: "sessionize".into(),
                version: 1,
                inputs: vec!["interactions".into()],
                op: OpSpec::Sessionize {
                    gap_ms: transform::DEFAULT_GAP_MS,
                },
                output: "sessions".into(),
            },
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rawstore::RawStoreConfig;
    use shopflow_core::event::{ClientEvent, EventType};

    const H: u64 = shopflow_core::raw::HOUR_MS;

    struct Env {
        _dir: tempfile::TempDir,
        raw: RawStore,
        tables: TableStore,
    }

    fn env() -> Env {
        let dir = tempfile::tempdir().unwrap();
        let raw = RawStore::open(RawStoreConfig {
            sync: false,
            ..RawStoreConfig::new(dir.path().join("raw"))
        })
        .unwrap();
        let tables = TableStore::open(dir.path().join("tables")).unwrap().without_sync();
        Env { _dir: dir, raw, tables }
    }

    fn push(raw: &RawStore, sid: &str, sku: &str, ts: i64) {
        let doc = ClientEvent::new(sid, EventType::Detail, Some(sku.into()), ts).to_document();
        raw.append(&doc, H + ts as u64).unwrap();
    }

    #[test]
    fn rerun_without_new_data_is_unchanged() {
        let e = env();
        push(&e.raw, "s1", "A", 1);
        let dag = default_dag();
        let first = run_dag(&dag, &e.raw, &e.tables, None, false).unwrap();
        let second = run_dag(&dag, &e.raw, &e.tables, None, false).unwrap();
        assert!(second.iter().all(|r| r.mode == Materialization::Unchanged));
        assert_eq!(first[1].manifests[0].content_hash, second[1].manifests[0].content_hash);
    }

    #[test]
    fn new_raw_rows_are_consumed_incrementally() {
        let e = env();
        push(&e.raw, "s1", "A", 1);
        let dag = default_dag();
        run_dag(&dag, &e.raw, &e.tables, None, false).unwrap();
        for i in 0..10 {
            push(&e.raw, "s2", "B", 10 + i);
        }
        e.raw.append(br#"{"session_id":"s3","event_type":"teleport","ts":5}"#, H).unwrap();
        let runs = run_dag(&dag, &e.raw, &e.tables, None, false).unwrap();
        assert_eq!(runs[0].mode, Materialization::Incremental);
        assert_eq!(runs[0].manifests[0].row_count, 11);
        assert_eq!(runs[0].manifests[1].row_count, 1);
        assert_eq!(runs[1].mode, Materialization::Rebuilt);
    }

    #[test]
    fn version_bump_rebuilds_to_the_clean_room_hash() {
        let e = env();
        for i in 0..5 {
            push(&e.raw, "s1", "A", i);
        }
        let mut dag = default_dag();
        run_dag(&dag, &e.raw, &e.tables, None, false).unwrap();
        for i in 5..9 {
            push(&e.raw, "s1", "B", i);
        }
        dag.nodes[0].version = 2;
        let bumped = run_dag(&dag, &e.raw, &e.tables, None, false).unwrap();
        assert_eq!(bumped[0].mode, Materialization::Rebuilt);

        let clean = env();
        for i in 0..5 {
            push(&clean.raw, "s1", "A", i);
        }
        for i in 5..9 {
            push(&clean.raw, "s1", "B", i);
        }
        let scratch = run_dag(&dag, &clean.raw, &clean.tables, None, false).unwrap();
        for (a, b) in bumped.iter().zip(&scratch) {
            for (ma, mb) in a.manifests.iter().zip(&b.manifests) {
                assert_eq!(ma.content_hash, mb.content_hash);
            }
        }
    }

    #[test]
    fn missing_input_is_stale() {
        let e = env();
        let dag = default_dag();
        assert!(matches!(
            run_node(&dag, "sessionize", &e.raw, &e.tables, false),
            Err(TransformError::StaleInput { .. })
        ));
        assert!(matches!(run_node(&dag, "nope", &e.raw, &e.tables, false), Err(TransformError::UnknownNode(_))));
    }

    #[test]
    fn tampered_table_is_detected() {
        let e = env();
        push(&e.raw, "s1", "A", 1);
        run_dag(&default_dag(), &e.raw, &e.tables, None, false).unwrap();
        let m = e.tables.manifest("interactions").unwrap().unwrap();
        let path = e.tables.root().join("interactions").join(&m.data_file);
        let mut bytes = fs::read(&path).unwrap();
        bytes[3] ^= 1;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(e.tables.read("interactions"), Err(TransformError::CorruptTable { .. })));
    }
}
