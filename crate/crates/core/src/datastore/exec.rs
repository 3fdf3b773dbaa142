//! Query execution and timing behind a driver interface.

use std::path::Path;
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};

use super::schema::Schema;
use super::{DatabaseRef, Engine};
use crate::sql::parse_sql;

pub const DEFAULT_ROW_CAP: usize = 100_000;
pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;
pub const DEFAULT_REPETITIONS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "message", rename_all = "snake_case")]
pub enum ExecError {
    /// The engine rejected or failed the statement.
    #[error("execution error: {0}")]
    Exec(String),
    #[error("timeout after {0} ms")]
    Timeout(u64),
    #[error("connection error: {0}")]
    Connection(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Integer(i) => Some(*i as f64),
            Cell::Real(r) => Some(*r),
            _ => None,
        }
    }

    fn from_value(v: ValueRef<'_>) -> Cell {
        match v {
            ValueRef::Null => Cell::Null,
            ValueRef::Integer(i) => Cell::Integer(i),
            ValueRef::Real(r) => Cell::Real(r),
            ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
            ValueRef::Blob(b) => Cell::Blob(b.to_vec()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// The producing query has a top-level ORDER BY.
    pub ordered: bool,
    /// The row cap was hit.
    pub truncated: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub samples: Vec<f64>,
    pub median_ms: f64,
    pub timeout: bool,
}

impl TimingStats {
    pub fn from_samples(samples: Vec<f64>, timeout: bool) -> TimingStats {
        TimingStats {
            median_ms: median(&samples),
            samples,
            timeout,
        }
    }
}

/// Median; the mean of the two middle values for even counts, 0 when empty.
pub fn median(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub trait Driver: Send + Sync {
    fn engine(&self) -> Engine;
    fn introspect(&self, location: &Path) -> Result<Schema, ExecError>;
    fn execute(
        &self,
        db: &DatabaseRef,
        sql: &str,
        timeout_ms: u64,
        row_cap: usize,
    ) -> Result<ResultTable, ExecError>;
    /// One untimed warm-up, then `repetitions` timed runs on one connection.
    fn measure(
        &self,
        db: &DatabaseRef,
        sql: &str,
        repetitions: usize,
        timeout_ms: u64,
    ) -> Result<TimingStats, ExecError>;
}

pub struct SqliteDriver;

/// Placeholder for the optional MySQL engine; no client is linked.
pub struct MysqlDriver;

pub fn driver_for(engine: Engine) -> &'static dyn Driver {
    match engine {
        Engine::Sqlite => &SqliteDriver,
        Engine::Mysql => &MysqlDriver,
    }
}

pub fn execute_query(
    db: &DatabaseRef,
    sql: &str,
    timeout_ms: u64,
    row_cap: usize,
) -> Result<ResultTable, ExecError> {
    driver_for(db.engine).execute(db, sql, timeout_ms, row_cap)
}

pub fn measure_time(
    db: &DatabaseRef,
    sql: &str,
    repetitions: usize,
    timeout_ms: u64,
) -> Result<TimingStats, ExecError> {
    driver_for(db.engine).measure(db, sql, repetitions.max(1), timeout_ms)
}

fn open_read_only(path: &Path) -> Result<Connection, ExecError> {
    if !path.is_file() {
        return Err(ExecError::Connection(format!(
            "{} does not exist",
            path.display()
        )));
    }
    let conn = Connection::open_with_flags(
        path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )
    .map_err(|e| ExecError::Connection(e.to_string()))?;
    conn.execute_batch("PRAGMA query_only = 1;")
        .map_err(|e| ExecError::Connection(e.to_string()))?;
    Ok(conn)
}

fn set_deadline(conn: &Connection, timeout_ms: u64) -> Instant {
    let deadline = Instant::now() + Duration::from_millis(timeout_ms);
    conn.progress_handler(1000, Some(move || Instant::now() >= deadline));
    deadline
}

fn map_err(e: rusqlite::Error, timeout_ms: u64) -> ExecError {
    match &e {
        rusqlite::Error::SqliteFailure(f, _) if f.code == rusqlite::ErrorCode::OperationInterrupted => {
            ExecError::Timeout(timeout_ms)
        }
        _ => ExecError::Exec(e.to_string()),
    }
}

/// Runs `sql` inside a rolled-back transaction, handing each row to `sink`
/// until it returns false.
fn run<F>(conn: &Connection, sql: &str, timeout_ms: u64, mut sink: F) -> Result<Vec<String>, ExecError>
where
    F: FnMut(&rusqlite::Row<'_>, usize) -> bool,
{
    conn.execute_batch("BEGIN").map_err(|e| map_err(e, timeout_ms))?;
    let result = (|| {
        let mut stmt = conn.prepare(sql).map_err(|e| map_err(e, timeout_ms))?;
        if !stmt.readonly() {
            return Err(ExecError::Exec("statement is not read-only".into()));
        }
        let columns: Vec<String> = stmt.column_names().into_iter().map(String::from).collect();
        let width = columns.len();
        let mut rows = stmt.query([]).map_err(|e| map_err(e, timeout_ms))?;
        while let Some(row) = rows.next().map_err(|e| map_err(e, timeout_ms))? {
            if !sink(row, width) {
                break;
            }
        }
        Ok(columns)
    })();
    let _ = conn.execute_batch("ROLLBACK");
    result
}

impl Driver for SqliteDriver {
    fn engine(&self) -> Engine {
        Engine::Sqlite
    }

    fn introspect(&self, location: &Path) -> Result<Schema, ExecError> {
        let conn = open_read_only(location)?;
        Schema::introspect(&conn).map_err(|e| ExecError::Connection(e.to_string()))
    }

    fn execute(
        &self,
        db: &DatabaseRef,
        sql: &str,
        timeout_ms: u64,
        row_cap: usize,
    ) -> Result<ResultTable, ExecError> {
        let conn = open_read_only(&db.location)?;
        set_deadline(&conn, timeout_ms);
        let mut out = Vec::new();
        let mut truncated = false;
        let columns = run(&conn, sql, timeout_ms, |row, width| {
            if out.len() == row_cap {
                truncated = true;
                return false;
            }
            out.push(
                (0..width)
                    .map(|i| row.get_ref(i).map(Cell::from_value).unwrap_or(Cell::Null))
                    .collect(),
            );
            true
        })?;
        let ordered = parse_sql(sql, db.engine.dialect())
            .map(|q| q.is_ordered())
            .unwrap_or(false);
        Ok(ResultTable {
            columns,
            rows: out,
            ordered,
            truncated,
        })
    }

    fn measure(
        &self,
        db: &DatabaseRef,
        sql: &str,
        repetitions: usize,
        timeout_ms: u64,
    ) -> Result<TimingStats, ExecError> {
        let conn = open_read_only(&db.location)?;
        let mut samples = Vec::with_capacity(repetitions);
        for i in 0..=repetitions {
            set_deadline(&conn, timeout_ms);
            let start = Instant::now();
            match run(&conn, sql, timeout_ms, |_, _| true) {
                Ok(_) => {
                    if i > 0 {
                        samples.push(start.elapsed().as_secs_f64() * 1000.0);
                    }
                }
                Err(ExecError::Timeout(_)) => return Ok(TimingStats::from_samples(samples, true)),
                Err(e) => return Err(e),
            }
        }
        Ok(TimingStats::from_samples(samples, false))
    }
}

impl Driver for MysqlDriver {
    fn engine(&self) -> Engine {
        Engine::Mysql
    }

    fn introspect(&self, _: &Path) -> Result<Schema, ExecError> {
        Err(unavailable())
    }

    fn execute(&self, _: &DatabaseRef, _: &str, _: u64, _: usize) -> Result<ResultTable, ExecError> {
        Err(unavailable())
    }

    fn measure(&self, _: &DatabaseRef, _: &str, _: usize, _: u64) -> Result<TimingStats, ExecError> {
        Err(unavailable())
    }
}

fn unavailable() -> ExecError {
    ExecError::Connection("mysql driver is not available in this build".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn db(sql: &str) -> (tempfile::TempDir, DatabaseRef) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.sqlite");
        Connection::open(&path).unwrap().execute_batch(sql).unwrap();
        let r = DatabaseRef::open("t", Engine::Sqlite, path).unwrap();
        (dir, r)
    }

    #[test]
    fn select_literal() {
        let (_d, db) = db("CREATE TABLE r (a INT);");
        let t = execute_query(&db, "SELECT 1 AS x", 1000, 10).unwrap();
        assert_eq!(t.columns, ["x"]);
        assert_eq!(t.rows, vec![vec![Cell::Integer(1)]]);
        assert!(!t.ordered && !t.truncated);
        let t = execute_query(&db, "SELECT a FROM r ORDER BY a", 1000, 10).unwrap();
        assert!(t.ordered);
    }

    #[test]
    fn missing_table_is_exec_error() {
        let (_d, db) = db("CREATE TABLE r (a INT);");
        let err = execute_query(&db, "SELECT * FROM nope", 1000, 10).unwrap_err();
        assert!(matches!(err, ExecError::Exec(m) if m.contains("no such table")));
    }

    #[test]
    fn writes_are_rejected_and_database_unchanged() {
        let (_d, db) = db("CREATE TABLE r (a INT); INSERT INTO r VALUES (1);");
        let before = std::fs::read(&db.location).unwrap();
        assert!(execute_query(&db, "DELETE FROM r", 1000, 10).is_err());
        assert!(execute_query(&db, "SELECT 1; DELETE FROM r", 1000, 10).is_err());
        assert_eq!(std::fs::read(&db.location).unwrap(), before);
    }

    #[test]
    fn row_cap_truncates() {
        let (_d, db) = db("CREATE TABLE r (a INT);");
        let sql = "WITH RECURSIVE n(i) AS (SELECT 1 UNION ALL SELECT i + 1 FROM n WHERE i < 10010) SELECT i FROM n";
        let t = execute_query(&db, sql, 10_000, 10_000).unwrap();
        assert!(t.truncated);
        assert_eq!(t.rows.len(), 10_000);
        let t = execute_query(&db, sql, 10_000, 10_010).unwrap();
        assert!(!t.truncated);
    }

    #[test]
    fn median_definition() {
        assert_eq!(median(&[3.0, 1.0, 2.0, 9.0, 2.0]), 2.0);
        assert_eq!(median(&[1.0, 4.0]), 2.5);
        assert_eq!(median(&[]), 0.0);
    }

    #[test]
    fn timing_and_timeout() {
        let (_d, db) = db("CREATE TABLE big (a INT);
             WITH RECURSIVE n(i) AS (SELECT 1 UNION ALL SELECT i + 1 FROM n WHERE i < 400)
             INSERT INTO big SELECT i FROM n;");
        let t = measure_time(&db, "SELECT count(*) FROM big", 5, 5000).unwrap();
        assert_eq!(t.samples.len(), 5);
        assert!(!t.timeout);
        let slow = "SELECT count(*) FROM big a, big b, big c";
        let t = measure_time(&db, slow, 3, 100).unwrap();
        assert!(t.timeout);
        assert!(matches!(
            execute_query(&db, slow, 100, 10),
            Err(ExecError::Timeout(100))
        ));
    }

    #[test]
    fn mysql_is_a_connection_error() {
        assert!(matches!(
            driver_for(Engine::Mysql).introspect(Path::new("x")),
            Err(ExecError::Connection(_))
        ));
    }
}
