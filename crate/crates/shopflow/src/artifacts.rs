//! Versioned model artifacts.
//!
//! ```text
//! <artifact_root>/<version>/model.json       canonical TransitionModel encoding
//! <artifact_root>/<version>/eval.json        EvalSummary
//! <artifact_root>/<version>/checklist.json   Checklist
//! <artifact_root>/<version>/lineage.json     Lineage
//! <artifact_root>/<version>/manifest.json    SHA-256 of each file above
//! ```
//!
//! `version` is the content id of `model.json`, so retraining on the same
//! data lands in the same directory.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shopflow_core::hash::{content_id, sha256_hex};
use shopflow_core::raw::Watermarks;
use shopflow_core::recsys::{Checklist, EvalReport, SearchPoint, TransitionModel};

use crate::fsutil::{now_ms, write_atomic};

pub const MODEL_FILE: &str = "model.json";
pub const EVAL_FILE: &str = "eval.json";
pub const CHECKLIST_FILE: &str = "checklist.json";
pub const LINEAGE_FILE: &str = "lineage.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split_ts: i64,
    pub train: usize,
    pub test: usize,
    pub straddlers: usize,
    pub excluded: usize,
    /// Inner split used to pick alpha; `None` when train doubled as
    /// validation.
    pub validation_split_ts: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub report: EvalReport,
    pub best_alpha: f64,
    pub search: Vec<SearchPoint>,
    pub split: SplitSummary,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Lineage {
    pub raw_watermarks: Watermarks,
    pub node_versions: BTreeMap<String, u32>,
    pub sessions_hash: Option<String>,
    pub suite_report_hash: Option<String>,
    pub flow_run_id: Option<String>,
    #[serde(default)]
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactManifest {
    pub version: String,
    pub created_at: u64,
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct Artifact {
    pub version: String,
    pub model: TransitionModel,
    pub eval: EvalSummary,
    pub checklist: Checklist,
    pub lineage: Lineage,
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Packaged {
    pub version: String,
    pub path: PathBuf,
    /// An identical model was already packaged; the existing copy was kept.
    pub reused: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("PACKAGE_BLOCKED: checklist failed: {}", .0.join("; "))]
    PackageBlocked(Vec<String>),
    #[error("UNKNOWN_VERSION: {0}")]
    UnknownVersion(String),
    #[error("CORRUPT_ARTIFACT: {version}: {detail}")]
    CorruptArtifact { version: String, detail: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub struct ArtifactStore {
    root: PathBuf,
}

fn valid_version(v: &str) -> bool {
    !v.is_empty() && v.len() <= 64 && v.bytes().all(|b| b.is_ascii_hexdigit())
}

impl ArtifactStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ArtifactStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Write an artifact. Refused unless every checklist item passed.
    pub fn package(&self, model: &TransitionModel, eval: &EvalSummary, checklist: &Checklist, lineage: &Lineage) -> Result<Packaged, ArtifactError> {
        if !checklist.all_passed() {
            return Err(ArtifactError::PackageBlocked(checklist.failures().map(|c| format!("{}: {}", c.name, c.detail)).collect()));
        }
        let model_bytes = model.encode();
        let version = content_id(&model_bytes);
        let dest = self.root.join(&version);
        if dest.exists() {
            if self.load(&version).is_ok() {
                return Ok(Packaged {
                    version,
                    path: dest,
                    reused: true,
                });
            }
            fs::remove_dir_all(&dest)?;
        }
        fs::create_dir_all(&self.root)?;
        let created_at = now_ms();
        let mut lineage = lineage.clone();
        lineage.created_at = created_at;
        let files: Vec<(&str, Vec<u8>)> = vec![
            (MODEL_FILE, model_bytes),
            (EVAL_FILE, serde_json::to_vec_pretty(eval).expect("eval serializes")),
            (CHECKLIST_FILE, serde_json::to_vec_pretty(checklist).expect("checklist serializes")),
            (LINEAGE_FILE, serde_json::to_vec_pretty(&lineage).expect("lineage serializes")),
        ];
        let tmp = self.root.join(format!(".tmp-{version}-{}-{created_at}", std::process::id()));
        fs::create_dir_all(&tmp)?;
        let mut hashes = BTreeMap::new();
        for (name, bytes) in &files {
            write_atomic(&tmp.join(name), bytes, true)?;
            hashes.insert(name.to_string(), sha256_hex(bytes));
        }
        let manifest = ArtifactManifest {
            version: version.clone(),
            created_at,
            files: hashes,
        };
        write_atomic(&tmp.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest).expect("manifest serializes"), true)?;
        match fs::rename(&tmp, &dest) {
            Ok(()) => {}
            // Lost a race with an identical package.
            Err(_) if dest.exists() => {
                let _ = fs::remove_dir_all(&tmp);
                return Ok(Packaged {
                    version,
                    path: dest,
                    reused: true,
                });
            }
            Err(e) => return Err(e.into()),
        }
        Ok(Packaged {
            version,
            path: dest,
            reused: false,
        })
    }

    /// Read and verify an artifact: every file must match the manifest and
    /// the model must hash to its version.
    pub fn load(&self, version: &str) -> Result<Artifact, ArtifactError> {
        if !valid_version(version) {
            return Err(ArtifactError::UnknownVersion(version.to_string()));
        }
        let dir = self.root.join(version);
        if !dir.is_dir() {
            return Err(ArtifactError::UnknownVersion(version.to_string()));
        }
        let corrupt = |detail: String| ArtifactError::CorruptArtifact {
            version: version.to_string(),
            detail,
        };
        let read = |name: &str| fs::read(dir.join(name)).map_err(|e| corrupt(format!("{name}: {e}")));
        let manifest: ArtifactManifest = serde_json::from_slice(&read(MANIFEST_FILE)?).map_err(|e| corrupt(format!("manifest: {e}")))?;
        let mut bodies = BTreeMap::new();
        for name in [MODEL_FILE, EVAL_FILE, CHECKLIST_FILE, LINEAGE_FILE] {
            let bytes = read(name)?;
            if manifest.files.get(name) != Some(&sha256_hex(&bytes)) {
                return Err(corrupt(format!("{name}: hash mismatch")));
            }
            bodies.insert(name, bytes);
        }
        if content_id(&bodies[MODEL_FILE]) != version || manifest.version != version {
            return Err(corrupt("model does not hash to its version".into()));
        }
        let model = TransitionModel::decode(&bodies[MODEL_FILE]).map_err(|e| corrupt(e.to_string()))?;
        let parse_err = |name: &str, e: serde_json::Error| corrupt(format!("{name}: {e}"));
        Ok(Artifact {
            version: version.to_string(),
            model,
            eval: serde_json::from_slice(&bodies[EVAL_FILE]).map_err(|e| parse_err(EVAL_FILE, e))?,
            checklist: serde_json::from_slice(&bodies[CHECKLIST_FILE]).map_err(|e| parse_err(CHECKLIST_FILE, e))?,
            lineage: serde_json::from_slice(&bodies[LINEAGE_FILE]).map_err(|e| parse_err(LINEAGE_FILE, e))?,
            created_at: manifest.created_at,
        })
    }

    /// Packaged versions, oldest first.
    pub fn versions(&self) -> Result<Vec<String>, ArtifactError> {
        let mut out: Vec<(u64, String)> = Vec::new();
        let entries = match fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        for e in entries {
            let e = e?;
            let name = e.file_name().to_string_lossy().into_owned();
            if !valid_version(&name) {
                continue;
            }
            let created = fs::read(e.path().join(MANIFEST_FILE))
                .ok()
                .and_then(|b| serde_json::from_slice::<ArtifactManifest>(&b).ok())
                .map_or(0, |m| m.created_at);
            out.push((created, name));
        }
        out.sort();
        Ok(out.into_iter().map(|(_, v)| v).collect())
    }
}
