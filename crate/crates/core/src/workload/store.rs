//! Versioned workload files: `<root>/<id>/v<k>.jsonl` plus `meta.json`.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::model::{parse_jsonl, validate_points, ValidateOptions, ValidationError, Workload};
use crate::datastore::Catalog;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionMeta {
    pub version: u32,
    pub parent_version: Option<u32>,
    pub created_at: String,
    pub size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadMeta {
    pub workload_id: String,
    pub versions: Vec<VersionMeta>,
}

impl WorkloadMeta {
    pub fn latest(&self) -> Option<u32> {
        self.versions.iter().map(|v| v.version).max()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("workload `{0}` not found")]
    NotFound(String),
    #[error("workload `{id}` has no version {version}")]
    NoVersion { id: String, version: u32 },
    #[error("version {version} of `{id}` cannot be published: {reason}")]
    Publish { id: String, version: u32, reason: String },
    #[error(transparent)]
    Invalid(#[from] ValidationError),
    #[error("workload storage: {0}")]
    Io(#[from] std::io::Error),
}

pub struct WorkloadStore {
    root: PathBuf,
    lock: Mutex<()>,
}

fn is_valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')) && !id.starts_with('.')
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

impl WorkloadStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        WorkloadStore {
            root: root.into(),
            lock: Mutex::new(()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &str) -> Result<PathBuf, StoreError> {
        if !is_valid_id(id) {
            return Err(StoreError::NotFound(id.to_string()));
        }
        Ok(self.root.join(id))
    }

    pub fn version_path(&self, id: &str, version: u32) -> Result<PathBuf, StoreError> {
        Ok(self.dir(id)?.join(format!("v{version}.jsonl")))
    }

    fn file_versions(&self, id: &str) -> Result<Vec<u32>, StoreError> {
        let dir = self.dir(id)?;
        let entries = std::fs::read_dir(&dir).map_err(|_| StoreError::NotFound(id.to_string()))?;
        let mut out: Vec<u32> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_prefix('v')?.strip_suffix(".jsonl")?.parse().ok()
            })
            .collect();
        out.sort_unstable();
        Ok(out)
    }

    /// Lineage from `meta.json`, synthesized from the files if absent.
    pub fn meta(&self, id: &str) -> Result<WorkloadMeta, StoreError> {
        let dir = self.dir(id)?;
        if let Ok(text) = std::fs::read_to_string(dir.join("meta.json")) {
            if let Ok(m) = serde_json::from_str::<WorkloadMeta>(&text) {
                return Ok(m);
            }
        }
        let versions = self.file_versions(id)?;
        if versions.is_empty() {
            return Err(StoreError::NotFound(id.to_string()));
        }
        let mut metas = Vec::new();
        for v in versions {
            let text = std::fs::read_to_string(self.version_path(id, v)?)?;
            metas.push(VersionMeta {
                version: v,
                parent_version: (v > 1).then(|| v - 1),
                created_at: String::new(),
                size: text.lines().filter(|l| !l.trim().is_empty()).count(),
                note: None,
            });
        }
        Ok(WorkloadMeta {
            workload_id: id.to_string(),
            versions: metas,
        })
    }

    pub fn list(&self) -> Result<Vec<WorkloadMeta>, StoreError> {
        let mut out = Vec::new();
        let Ok(entries) = std::fs::read_dir(&self.root) else {
            return Ok(out);
        };
        let mut ids: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        ids.sort();
        for id in ids {
            if let Ok(m) = self.meta(&id) {
                out.push(m);
            }
        }
        Ok(out)
    }

    /// Loads and validates `version` (latest when `None`).
    pub fn load(&self, id: &str, version: Option<u32>, catalog: &Catalog, opts: ValidateOptions) -> Result<Workload, StoreError> {
        let meta = self.meta(id)?;
        let version = match version {
            Some(v) => v,
            None => meta.latest().ok_or_else(|| StoreError::NotFound(id.to_string()))?,
        };
        let vm = meta
            .versions
            .iter()
            .find(|v| v.version == version)
            .cloned()
            .ok_or_else(|| StoreError::NoVersion {
                id: id.to_string(),
                version,
            })?;
        let text = std::fs::read_to_string(self.version_path(id, version)?).map_err(|_| StoreError::NoVersion {
            id: id.to_string(),
            version,
        })?;
        let mut data_points = parse_jsonl(&text)?;
        validate_points(&mut data_points, catalog, opts)?;
        Ok(Workload {
            workload_id: id.to_string(),
            version,
            parent_version: vm.parent_version,
            created_at: vm.created_at,
            data_points,
        })
    }

    /// Writes a new immutable version. Version 1 needs no parent; later
    /// versions must extend their parent's data points.
    pub fn publish(&self, w: &Workload, note: Option<&str>) -> Result<(), StoreError> {
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        let err = |reason: String| StoreError::Publish {
            id: w.workload_id.clone(),
            version: w.version,
            reason,
        };
        let dir = self.dir(&w.workload_id)?;
        let path = self.version_path(&w.workload_id, w.version)?;
        if path.exists() {
            return Err(err("version already exists".into()));
        }
        let mut meta = match self.meta(&w.workload_id) {
            Ok(m) => m,
            Err(StoreError::NotFound(_)) => WorkloadMeta {
                workload_id: w.workload_id.clone(),
                versions: Vec::new(),
            },
            Err(e) => return Err(e),
        };
        let expected = meta.latest().map_or(1, |v| v + 1);
        if w.version != expected {
            return Err(err(format!("next version is {expected}")));
        }
        if let Some(parent) = w.parent_version {
            let text = std::fs::read_to_string(self.version_path(&w.workload_id, parent)?)
                .map_err(|_| err(format!("parent version {parent} missing")))?;
            let parent_points = parse_jsonl(&text)?;
            let ids: HashSet<&str> = w.data_points.iter().map(|d| d.id.as_str()).collect();
            if let Some(missing) = parent_points.iter().find(|p| !ids.contains(p.id.as_str())) {
                return Err(err(format!("drops parent data point {}", missing.id)));
            }
        } else if w.version > 1 {
            return Err(err("versions after the first need a parent".into()));
        }
        std::fs::create_dir_all(&dir)?;
        write_atomic(&path, w.to_jsonl().as_bytes())?;
        meta.versions.push(VersionMeta {
            version: w.version,
            parent_version: w.parent_version,
            created_at: w.created_at.clone(),
            size: w.data_points.len(),
            note: note.map(str::to_string),
        });
        write_atomic(
            &dir.join("meta.json"),
            serde_json::to_string_pretty(&meta).expect("meta serializes").as_bytes(),
        )?;
        Ok(())
    }
}
