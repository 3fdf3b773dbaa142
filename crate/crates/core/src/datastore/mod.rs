//! Database drivers, timed execution and dataset scaling.

pub mod catalog;
pub mod exec;
pub mod scale;
pub mod schema;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use catalog::{Catalog, CatalogEntry, CatalogError};
pub use exec::{
    driver_for, execute_query, measure_time, median, Cell, Driver, ExecError, ResultTable,
    SqliteDriver, TimingStats, DEFAULT_REPETITIONS, DEFAULT_ROW_CAP, DEFAULT_TIMEOUT_MS,
};
pub use scale::{fk_topological_order, scale_database, ScaleError, TopoOrder};
pub use schema::{Affinity, Column, ForeignKey, Schema, Table};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    #[default]
    Sqlite,
    Mysql,
}

impl Engine {
    pub fn dialect(self) -> crate::sql::SqlDialect {
        match self {
            Engine::Sqlite => crate::sql::SqlDialect::Sqlite,
            Engine::Mysql => crate::sql::SqlDialect::Mysql,
        }
    }
}

/// A resolved database: where it lives and what it contains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseRef {
    pub db_id: String,
    pub engine: Engine,
    /// File path for SQLite, connection descriptor otherwise.
    pub location: PathBuf,
    pub schema: Schema,
    #[serde(default = "one")]
    pub scale_factor: u32,
}

fn one() -> u32 {
    1
}

impl DatabaseRef {
    /// Opens the database at `location` and introspects its schema.
    pub fn open(db_id: &str, engine: Engine, location: impl Into<PathBuf>) -> Result<Self, ExecError> {
        let location = location.into();
        let schema = driver_for(engine).introspect(&location)?;
        Ok(DatabaseRef {
            db_id: db_id.to_string(),
            engine,
            location,
            schema,
            scale_factor: 1,
        })
    }

    /// Re-reads the live schema and checks it against the stored one.
    pub fn verify_schema(&self) -> Result<bool, ExecError> {
        Ok(driver_for(self.engine).introspect(&self.location)? == self.schema)
    }
}
