//! JSON catalog mapping database ids to engines and locations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rusqlite::Connection;
use serde::{Deserialize, Serialize};

use super::{DatabaseRef, Engine, ExecError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    #[serde(default)]
    pub engine: Engine,
    /// SQLite file path or connection descriptor; relative paths resolve
    /// against the catalog's directory.
    pub path: String,
    /// SQL script used to build the file when it does not exist yet.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_script: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct Catalog {
    pub databases: BTreeMap<String, CatalogEntry>,
    #[serde(skip)]
    base_dir: PathBuf,
    #[serde(skip)]
    build_lock: Mutex<()>,
}

impl Clone for Catalog {
    fn clone(&self) -> Self {
        Catalog {
            databases: self.databases.clone(),
            base_dir: self.base_dir.clone(),
            build_lock: Mutex::new(()),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("cannot read catalog {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid catalog {path}: {source}")]
    Format {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("unknown database `{0}`")]
    UnknownDb(String),
    #[error("cannot build database `{db_id}`: {message}")]
    Build { db_id: String, message: String },
    #[error(transparent)]
    Exec(#[from] ExecError),
}

impl Catalog {
    pub fn load(path: &Path) -> Result<Catalog, CatalogError> {
        let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cat: Catalog = serde_json::from_str(&text).map_err(|source| CatalogError::Format {
            path: path.to_path_buf(),
            source,
        })?;
        cat.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cat)
    }

    pub fn from_entries(base_dir: impl Into<PathBuf>, entries: BTreeMap<String, CatalogEntry>) -> Catalog {
        Catalog {
            databases: entries,
            base_dir: base_dir.into(),
            build_lock: Mutex::new(()),
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.databases.keys().map(String::as_str)
    }

    pub fn contains(&self, db_id: &str) -> bool {
        self.databases.contains_key(db_id)
    }

    fn resolve_path(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Resolves `db_id`, building the SQLite file from its init script if
    /// it is missing.
    pub fn open(&self, db_id: &str) -> Result<DatabaseRef, CatalogError> {
        let entry = self
            .databases
            .get(db_id)
            .ok_or_else(|| CatalogError::UnknownDb(db_id.to_string()))?;
        if entry.engine == Engine::Mysql {
            return Ok(DatabaseRef::open(db_id, entry.engine, &entry.path)?);
        }
        let location = self.resolve_path(&entry.path);
        if !location.exists() {
            let _guard = self.build_lock.lock().unwrap_or_else(|e| e.into_inner());
            if !location.exists() {
                self.build(db_id, entry, &location)?;
            }
        }
        Ok(DatabaseRef::open(db_id, entry.engine, location)?)
    }

    fn build(&self, db_id: &str, entry: &CatalogEntry, location: &Path) -> Result<(), CatalogError> {
        let err = |message: String| CatalogError::Build {
            db_id: db_id.to_string(),
            message,
        };
        let script = entry
            .init_script
            .as_ref()
            .ok_or_else(|| err(format!("{} does not exist", location.display())))?;
        let sql = std::fs::read_to_string(self.resolve_path(script)).map_err(|e| err(e.to_string()))?;
        if let Some(dir) = location.parent() {
            std::fs::create_dir_all(dir).map_err(|e| err(e.to_string()))?;
        }
        let tmp = location.with_extension(format!("tmp{}", std::process::id()));
        let _ = std::fs::remove_file(&tmp);
        {
            let conn = Connection::open(&tmp).map_err(|e| err(e.to_string()))?;
            conn.execute_batch(&sql).map_err(|e| err(e.to_string()))?;
        }
        std::fs::rename(&tmp, location).map_err(|e| err(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_missing_file_from_script() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("t.sql"),
            "CREATE TABLE r (a INTEGER PRIMARY KEY); INSERT INTO r VALUES (1);",
        )
        .unwrap();
        std::fs::write(
            dir.path().join("catalog.json"),
            r#"{"databases": {"t": {"engine": "sqlite", "path": "db/t.sqlite", "init_script": "t.sql"}}}"#,
        )
        .unwrap();
        let cat = Catalog::load(&dir.path().join("catalog.json")).unwrap();
        let db = cat.open("t").unwrap();
        assert!(db.location.ends_with("db/t.sqlite"));
        assert_eq!(db.schema.tables[0].name, "r");
        assert!(db.verify_schema().unwrap());
        assert!(matches!(cat.open("nope"), Err(CatalogError::UnknownDb(_))));
    }
}
