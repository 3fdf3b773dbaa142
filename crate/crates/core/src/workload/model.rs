//! Data points and workloads, with validation on load.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datastore::{execute_query, Catalog, DatabaseRef};
use crate::sql::{ast_fingerprint, classify, normalize_with, parse_sql, NormalizeOptions, QueryAst, SchemaMap, SqlDialect, TaxonomyLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    SeedBenchmark(String),
    Augmented { model_id: String, run_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataPoint {
    pub id: String,
    pub question: String,
    pub gt_sql: String,
    pub db_id: String,
    pub split: Split,
    pub provenance: Provenance,
    /// Recomputed from `gt_sql` on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<TaxonomyLabel>,
}

impl DataPoint {
    pub fn parse(&self) -> Result<QueryAst, crate::sql::SqlError> {
        parse_sql(&self.gt_sql, SqlDialect::Sqlite)
    }

    /// Label, assuming the point was validated.
    pub fn label(&self) -> TaxonomyLabel {
        self.label
            .unwrap_or_else(|| classify(&self.parse().expect("validated data point parses")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workload {
    pub workload_id: String,
    pub version: u32,
    pub parent_version: Option<u32>,
    pub created_at: String,
    pub data_points: Vec<DataPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub total: usize,
    pub train: usize,
    pub eval: usize,
    pub train_fraction: f64,
}

impl Workload {
    pub fn eval_points(&self) -> impl Iterator<Item = &DataPoint> {
        self.data_points.iter().filter(|d| d.split == Split::Eval)
    }

    pub fn train_points(&self) -> impl Iterator<Item = &DataPoint> {
        self.data_points.iter().filter(|d| d.split == Split::Train)
    }

    pub fn split_stats(&self) -> SplitStats {
        let total = self.data_points.len();
        let train = self.train_points().count();
        SplitStats {
            total,
            train,
            eval: total - train,
            train_fraction: if total == 0 { 0.0 } else { train as f64 / total as f64 },
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for dp in &self.data_points {
            out.push_str(&serde_json::to_string(dp).expect("data point serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid workload: {}", .problems.iter().map(|(id, why)| format!("{id}: {why}")).collect::<Vec<_>>().join("; "))]
pub struct ValidationError {
    pub problems: Vec<(String, String)>,
}

impl ValidationError {
    pub fn ids(&self) -> Vec<&str> {
        self.problems.iter().map(|(id, _)| id.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidateOptions {
    /// Also execute every ground truth on its database.
    pub execute: bool,
    pub timeout_ms: u64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            execute: true,
            timeout_ms: crate::datastore::DEFAULT_TIMEOUT_MS,
        }
    }
}

pub fn parse_jsonl(text: &str) -> Result<Vec<DataPoint>, ValidationError> {
    let mut out = Vec::new();
    let mut problems = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<DataPoint>(line) {
            Ok(dp) => out.push(dp),
            Err(e) => problems.push((format!("line {}", n + 1), e.to_string())),
        }
    }
    if problems.is_empty() {
        Ok(out)
    } else {
        Err(ValidationError { problems })
    }
}

/// Checks ids, parsing, database references and (optionally) execution,
/// and fills in every label.
pub fn validate_points(points: &mut [DataPoint], catalog: &Catalog, opts: ValidateOptions) -> Result<(), ValidationError> {
    let mut problems = Vec::new();
    let mut seen = HashSet::new();
    let mut dbs: BTreeMap<String, Option<DatabaseRef>> = BTreeMap::new();
    for dp in points.iter_mut() {
        if !seen.insert(dp.id.clone()) {
            problems.push((dp.id.clone(), "duplicate id".to_string()));
            continue;
        }
        let ast = match dp.parse() {
            Ok(a) => a,
            Err(e) => {
                problems.push((dp.id.clone(), format!("gt_sql does not parse: {e}")));
                continue;
            }
        };
        dp.label = Some(classify(&ast));
        if !catalog.contains(&dp.db_id) {
            problems.push((dp.id.clone(), format!("unknown db_id `{}`", dp.db_id)));
            continue;
        }
        if opts.execute {
            let db = dbs
                .entry(dp.db_id.clone())
                .or_insert_with(|| catalog.open(&dp.db_id).ok());
            match db {
                None => problems.push((dp.id.clone(), format!("cannot open database `{}`", dp.db_id))),
                Some(db) => {
                    if let Err(e) = execute_query(db, &dp.gt_sql, opts.timeout_ms, 1) {
                        problems.push((dp.id.clone(), format!("gt_sql fails: {e}")));
                    }
                }
            }
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(ValidationError { problems })
    }
}

/// Loads and validates a standalone JSONL workload file.
pub fn load_workload(path: &Path, catalog: &Catalog, opts: ValidateOptions) -> Result<Workload, ValidationError> {
    let text = std::fs::read_to_string(path).map_err(|e| ValidationError {
        problems: vec![(path.display().to_string(), e.to_string())],
    })?;
    let mut data_points = parse_jsonl(&text)?;
    validate_points(&mut data_points, catalog, opts)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("workload");
    let (workload_id, version) = match stem.strip_prefix('v').and_then(|v| v.parse().ok()) {
        Some(v) => (
            path.parent()
                .and_then(|p| p.file_name())
                .and_then(|s| s.to_str())
                .unwrap_or(stem)
                .to_string(),
            v,
        ),
        None => (stem.to_string(), 1),
    };
    let w = Workload {
        workload_id,
        version,
        parent_version: None,
        created_at: String::new(),
        data_points,
    };
    let stats = w.split_stats();
    tracing::info!(workload = %w.workload_id, total = stats.total, train = stats.train, eval = stats.eval, "workload loaded");
    Ok(w)
}

/// Structural identity of a query on a schema; literal values count.
pub fn query_fingerprint(q: &QueryAst, schema: Option<&SchemaMap>) -> u64 {
    let opts = NormalizeOptions {
        lenient: true,
        mask_literals: false,
    };
    match normalize_with(q, schema, opts) {
        Ok(n) => ast_fingerprint(&n),
        Err(_) => {
            use sha2::{Digest, Sha256};
            let d = Sha256::digest(q.render().to_lowercase().as_bytes());
            u64::from_be_bytes(d[..8].try_into().expect("eight bytes"))
        }
    }
}
