//! Demo databases, workloads and an illustrative alignment target,
//! installable into a fresh workdir.

use std::path::{Path, PathBuf};

use crate::workload::{VersionMeta, WorkloadMeta};

pub const DATABASES: [(&str, &str); 2] = [
    ("company", include_str!("../data/databases/company.sql")),
    ("store", include_str!("../data/databases/store.sql")),
];

pub const WORKLOADS: [(&str, &str); 4] = [
    ("demo_easy", include_str!("../data/workloads/demo_easy/v1.jsonl")),
    ("demo_medium", include_str!("../data/workloads/demo_medium/v1.jsonl")),
    ("demo_hard", include_str!("../data/workloads/demo_hard/v1.jsonl")),
    ("demo_train", include_str!("../data/workloads/demo_train/v1.jsonl")),
];

/// Category weights for alignment. The numbers are illustrative only.
pub const ILLUSTRATIVE_TARGET: &str = include_str!("../data/targets/illustrative_target.json");

pub const TAXONOMY: &str = include_str!("../data/taxonomy.txt");

fn write_new(path: &Path, contents: &str) -> std::io::Result<bool> {
    if path.exists() {
        return Ok(false);
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    Ok(true)
}

/// Populates `workdir` with `catalog.json`, `databases/`, `workloads/` and
/// `targets/`. Existing files are left untouched; returns the files written.
pub fn install(workdir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |rel: String, contents: &str| -> std::io::Result<()> {
        let p = workdir.join(rel);
        if write_new(&p, contents)? {
            written.push(p);
        }
        Ok(())
    };
    let mut catalog = serde_json::Map::new();
    for (id, sql) in DATABASES {
        put(format!("databases/{id}.sql"), sql)?;
        catalog.insert(
            id.to_string(),
            serde_json::json!({
                "engine": "sqlite",
                "path": format!("databases/{id}.sqlite"),
                "init_script": format!("databases/{id}.sql"),
            }),
        );
    }
    let catalog = serde_json::json!({ "databases": catalog });
    put("catalog.json".into(), &(serde_json::to_string_pretty(&catalog).expect("catalog serializes") + "\n"))?;
    for (id, jsonl) in WORKLOADS {
        put(format!("workloads/{id}/v1.jsonl"), jsonl)?;
        let meta = WorkloadMeta {
            workload_id: id.to_string(),
            versions: vec![VersionMeta {
                version: 1,
                parent_version: None,
                created_at: String::new(),
                size: jsonl.lines().filter(|l| !l.trim().is_empty()).count(),
                note: Some("bundled".into()),
            }],
        };
        put(
            format!("workloads/{id}/meta.json"),
            &(serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n"),
        )?;
    }
    put("targets/illustrative_target.json".into(), ILLUSTRATIVE_TARGET)?;
    Ok(written)
}

/// True when `workdir` already has a catalog.
pub fn is_installed(workdir: &Path) -> bool {
    workdir.join("catalog.json").is_file()
}
