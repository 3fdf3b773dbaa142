//! Dataset scaling by per-column empirical row synthesis.
//!
//! Each table with `n` rows receives `n * (factor - 1)` synthetic rows.
//! Tables are filled parents-first so that foreign keys can be drawn from
//! the complete parent key pool. Cross-column correlations are not modeled.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rusqlite::types::Value;
use rusqlite::{params_from_iter, Connection};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::exec::Cell;
use super::schema::{Affinity, Schema, Table};
use super::{DatabaseRef, Engine, ExecError};

/// Columns with at most this many distinct values (NULL included) are
/// sampled from their frequency table.
pub const CATEGORICAL_LIMIT: usize = 256;
pub const HISTOGRAM_BUCKETS: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum ScaleError {
    #[error("foreign-key cycle without a nullable edge among tables {0:?}")]
    CyclicFk(Vec<String>),
    #[error("cannot write scaled database: {0}")]
    Capacity(String),
    #[error("invalid scaling request: {0}")]
    Invalid(String),
    #[error("scaled database failed verification: {0}")]
    Verify(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

fn sql_err(e: rusqlite::Error) -> ScaleError {
    match &e {
        rusqlite::Error::SqliteFailure(f, _)
            if matches!(
                f.code,
                rusqlite::ErrorCode::DiskFull
                    | rusqlite::ErrorCode::CannotOpen
                    | rusqlite::ErrorCode::ReadOnly
                    | rusqlite::ErrorCode::SystemIoFailure
            ) =>
        {
            ScaleError::Capacity(e.to_string())
        }
        _ => ScaleError::Verify(e.to_string()),
    }
}

fn io_err(e: std::io::Error) -> ScaleError {
    ScaleError::Capacity(e.to_string())
}

/// A foreign key whose cells are inserted as NULL and filled in once every
/// table has been populated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeferredFk {
    pub table: String,
    pub fk_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopoOrder {
    pub tables: Vec<String>,
    pub deferred: Vec<DeferredFk>,
}

/// Parents before children; ties broken by schema order. Self references
/// and cycles are broken by deferring nullable foreign keys.
pub fn fk_topological_order(schema: &Schema) -> Result<TopoOrder, ScaleError> {
    let idx: HashMap<String, usize> = schema
        .tables
        .iter()
        .enumerate()
        .map(|(i, t)| (t.name.to_lowercase(), i))
        .collect();
    let mut deferred = Vec::new();
    // (child, parent, table, fk index)
    let mut edges: Vec<(usize, usize, usize)> = Vec::new();
    for (ci, t) in schema.tables.iter().enumerate() {
        for (fi, fk) in t.foreign_keys.iter().enumerate() {
            let Some(&pi) = idx.get(&fk.parent_table.to_lowercase()) else {
                return Err(ScaleError::Invalid(format!(
                    "{} references missing table {}",
                    t.name, fk.parent_table
                )));
            };
            if pi == ci {
                if !t.fk_nullable(fk) {
                    return Err(ScaleError::CyclicFk(vec![t.name.clone()]));
                }
                deferred.push(DeferredFk {
                    table: t.name.clone(),
                    fk_index: fi,
                });
            } else {
                edges.push((ci, pi, fi));
            }
        }
    }

    let n = schema.tables.len();
    loop {
        match kahn(n, &edges) {
            Ok(order) => {
                return Ok(TopoOrder {
                    tables: order.into_iter().map(|i| schema.tables[i].name.clone()).collect(),
                    deferred,
                })
            }
            Err(stuck) => {
                let before = edges.len();
                edges.retain(|&(c, p, fi)| {
                    let t = &schema.tables[c];
                    let breakable =
                        stuck.contains(&c) && stuck.contains(&p) && t.fk_nullable(&t.foreign_keys[fi]);
                    if breakable {
                        deferred.push(DeferredFk {
                            table: t.name.clone(),
                            fk_index: fi,
                        });
                    }
                    !breakable
                });
                if edges.len() == before {
                    return Err(ScaleError::CyclicFk(
                        stuck.iter().map(|&i| schema.tables[i].name.clone()).collect(),
                    ));
                }
            }
        }
    }
}

/// Kahn's algorithm; on failure returns the tables left on cycles.
fn kahn(n: usize, edges: &[(usize, usize, usize)]) -> Result<Vec<usize>, Vec<usize>> {
    let mut pending = vec![0usize; n];
    for &(c, p, _) in edges {
        if c != p {
            pending[c] += 1;
        }
    }
    let mut done = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while let Some(next) = (0..n).find(|&i| !done[i] && pending[i] == 0) {
        done[next] = true;
        order.push(next);
        for &(c, p, _) in edges {
            if p == next {
                pending[c] -= 1;
            }
        }
    }
    if order.len() == n {
        Ok(order)
    } else {
        Err((0..n).filter(|&i| !done[i]).collect())
    }
}

/// How synthetic values of one column are produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnSampler {
    /// Unique or key column: integers continue from the maximum, text gets
    /// an `_s<i>` suffix.
    Fresh { integer: bool },
    ForeignKey { parent_table: String, deferred: bool },
    Categorical { values: Vec<(Cell, usize)> },
    Histogram {
        edges: Vec<f64>,
        integer: bool,
        null_count: usize,
    },
    TextSuffix { null_count: usize },
    Resample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingProfile {
    pub factor: u32,
    pub seed: u64,
    /// Keyed by `table.column`.
    pub columns: BTreeMap<String, ColumnSampler>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScaleMeta {
    db_id: String,
    source_sha256: String,
    factor: u32,
    seed: u64,
    row_counts: BTreeMap<String, usize>,
    profile: ScalingProfile,
}

fn file_sha256(path: &Path) -> Result<String, ScaleError> {
    let bytes = std::fs::read(path).map_err(io_err)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn table_rng(seed: u64, table: &str) -> ChaCha8Rng {
    let h = Sha256::digest(table.to_lowercase().as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&h[..8]);
    ChaCha8Rng::seed_from_u64(seed ^ u64::from_be_bytes(b))
}

/// Distributes `m` draws over `counts` in proportion, by largest remainder.
pub fn quotas(counts: &[usize], m: usize) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return vec![0; counts.len()];
    }
    let mut out: Vec<usize> = counts.iter().map(|&c| c * m / n).collect();
    let mut rest = m - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse((counts[i] * m) % n));
    for i in order {
        if rest == 0 {
            break;
        }
        out[i] += 1;
        rest -= 1;
    }
    out
}

fn quote(ident: &str) -> String {
    format!("\"{}\"", ident.replace('"', "\"\""))
}

fn to_cell(v: &Value) -> Cell {
    match v {
        Value::Null => Cell::Null,
        Value::Integer(i) => Cell::Integer(*i),
        Value::Real(r) => Cell::Real(*r),
        Value::Text(t) => Cell::Text(t.clone()),
        Value::Blob(b) => Cell::Blob(b.clone()),
    }
}

fn from_cell(c: &Cell) -> Value {
    match c {
        Cell::Null => Value::Null,
        Cell::Integer(i) => Value::Integer(*i),
        Cell::Real(r) => Value::Real(*r),
        Cell::Text(t) => Value::Text(t.clone()),
        Cell::Blob(b) => Value::Blob(b.clone()),
    }
}

fn value_key(v: &Value) -> String {
    match v {
        Value::Null => "n".into(),
        Value::Integer(i) => format!("i{i}"),
        Value::Real(r) => format!("r{}", r.to_bits()),
        Value::Text(t) => format!("t{t}"),
        Value::Blob(b) => format!("b{b:?}"),
    }
}

/// Builds the sampler for column `ci` of `table` from its original values.
fn profile_column(table: &Table, ci: usize, values: &[Value], fk_cols: &HashMap<String, (String, bool)>) -> ColumnSampler {
    let col = &table.columns[ci];
    if let Some((parent, deferred)) = fk_cols.get(&col.name.to_lowercase()) {
        return ColumnSampler::ForeignKey {
            parent_table: parent.clone(),
            deferred: *deferred,
        };
    }
    let non_null: Vec<&Value> = values.iter().filter(|v| !matches!(v, Value::Null)).collect();
    let all_int = non_null.iter().all(|v| matches!(v, Value::Integer(_)));
    if col.unique || col.pk {
        return ColumnSampler::Fresh {
            integer: col.affinity == Affinity::Integer || (all_int && !non_null.is_empty()),
        };
    }
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut cats: Vec<(Cell, usize)> = Vec::new();
    for v in values {
        let k = value_key(v);
        match seen.get(&k) {
            Some(&i) => cats[i].1 += 1,
            None => {
                if cats.len() <= CATEGORICAL_LIMIT {
                    seen.insert(k, cats.len());
                    cats.push((to_cell(v), 1));
                }
            }
        }
    }
    let null_count = values.len() - non_null.len();
    if cats.len() <= CATEGORICAL_LIMIT {
        return ColumnSampler::Categorical { values: cats };
    }
    let nums: Option<Vec<f64>> = non_null
        .iter()
        .map(|v| match v {
            Value::Integer(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        })
        .collect();
    if let Some(mut nums) = nums {
        nums.sort_by(f64::total_cmp);
        let buckets = HISTOGRAM_BUCKETS.min(nums.len().max(1));
        let edges = (0..=buckets)
            .map(|k| nums[(k * (nums.len() - 1)) / buckets])
            .collect();
        return ColumnSampler::Histogram {
            edges,
            integer: all_int,
            null_count,
        };
    }
    if non_null.iter().all(|v| matches!(v, Value::Text(_))) {
        return ColumnSampler::TextSuffix { null_count };
    }
    ColumnSampler::Resample
}

const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";

fn suffixed(rng: &mut ChaCha8Rng, s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let keep = chars.len() / 2;
    let mut out: String = chars[..keep].iter().collect();
    for _ in keep..chars.len() {
        out.push(ALPHABET[rng.random_range(0..ALPHABET.len())] as char);
    }
    out
}

/// Synthesizes `m` values for a non-key column.
fn synthesize(sampler: &ColumnSampler, original: &[Value], m: usize, rng: &mut ChaCha8Rng) -> Vec<Value> {
    let with_nulls = |null_count: usize, rng: &mut ChaCha8Rng, gen: &mut dyn FnMut(&mut ChaCha8Rng) -> Value| {
        let q = quotas(&[null_count, original.len() - null_count], m);
        let mut out: Vec<Value> = vec![Value::Null; q[0]];
        for _ in 0..q[1] {
            out.push(gen(rng));
        }
        out.shuffle(rng);
        out
    };
    match sampler {
        ColumnSampler::Categorical { values } => {
            let counts: Vec<usize> = values.iter().map(|(_, c)| *c).collect();
            let mut out = Vec::with_capacity(m);
            for ((cell, _), q) in values.iter().zip(quotas(&counts, m)) {
                out.extend(std::iter::repeat_n(from_cell(cell), q));
            }
            out.shuffle(rng);
            out
        }
        ColumnSampler::Histogram {
            edges,
            integer,
            null_count,
        } => with_nulls(*null_count, rng, &mut |rng| {
            let b = rng.random_range(0..edges.len() - 1);
            let (lo, hi) = (edges[b], edges[b + 1]);
            let x = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            if *integer {
                Value::Integer(x.round() as i64)
            } else {
                Value::Real(x)
            }
        }),
        ColumnSampler::TextSuffix { null_count } => {
            let texts: Vec<&str> = original
                .iter()
                .filter_map(|v| match v {
                    Value::Text(t) => Some(t.as_str()),
                    _ => None,
                })
                .collect();
            with_nulls(*null_count, rng, &mut |rng| {
                let s = texts[rng.random_range(0..texts.len())];
                Value::Text(suffixed(rng, s))
            })
        }
        ColumnSampler::Resample => (0..m)
            .map(|_| original[rng.random_range(0..original.len())].clone())
            .collect(),
        ColumnSampler::Fresh { .. } | ColumnSampler::ForeignKey { .. } => {
            unreachable!("key columns are generated separately")
        }
    }
}

fn fresh_values(integer: bool, original: &[Value], m: usize) -> Vec<Value> {
    if integer {
        let max = original
            .iter()
            .filter_map(|v| match v {
                Value::Integer(i) => Some(*i),
                Value::Real(r) => Some(r.ceil() as i64),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        (1..=m as i64).map(|i| Value::Integer(max + i)).collect()
    } else {
        let texts: Vec<String> = original
            .iter()
            .filter_map(|v| match v {
                Value::Null => None,
                Value::Text(t) => Some(t.clone()),
                other => Some(value_key(other)),
            })
            .collect();
        (1..=m)
            .map(|i| {
                Value::Text(if texts.is_empty() {
                    format!("s{i}")
                } else {
                    format!("{}_s{i}", texts[(i - 1) % texts.len()])
                })
            })
            .collect()
    }
}

/// Parent key tuples available for references into `table`.
fn key_pool(conn: &Connection, table: &str, cols: &[String]) -> Result<Vec<Vec<Value>>, ScaleError> {
    let list: Vec<String> = cols.iter().map(|c| quote(c)).collect();
    let sql = format!(
        "SELECT DISTINCT {} FROM {} WHERE {} ORDER BY {}",
        list.join(", "),
        quote(table),
        list.iter()
            .map(|c| format!("{c} IS NOT NULL"))
            .collect::<Vec<_>>()
            .join(" AND "),
        list.join(", ")
    );
    let mut stmt = conn.prepare(&sql).map_err(sql_err)?;
    let rows = stmt
        .query_map([], |r| (0..cols.len()).map(|i| r.get::<_, Value>(i)).collect())
        .map_err(sql_err)?
        .collect::<Result<Vec<Vec<Value>>, _>>()
        .map_err(sql_err)?;
    Ok(rows)
}

/// For `m` rows, which reference a parent tuple (Some) and which are NULL.
fn fk_draws(
    rng: &mut ChaCha8Rng,
    null_count: usize,
    n: usize,
    m: usize,
    pool: &[Vec<Value>],
    what: &str,
) -> Result<Vec<Option<usize>>, ScaleError> {
    let q = quotas(&[null_count, n - null_count], m);
    if q[1] > 0 && pool.is_empty() {
        return Err(ScaleError::Verify(format!("{what}: parent key pool is empty")));
    }
    let mut out: Vec<Option<usize>> = vec![None; q[0]];
    for _ in 0..q[1] {
        out.push(Some(rng.random_range(0..pool.len())));
    }
    out.shuffle(rng);
    Ok(out)
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Scaled copy location for `db_id` at `factor` under `workdir`.
pub fn scaled_path(workdir: &Path, db_id: &str, factor: u32) -> PathBuf {
    workdir
        .join("scaled")
        .join(format!("{db_id}_x{factor}"))
        .join(format!("{db_id}.sqlite"))
}

/// Writes a scaled copy of `db` under `<workdir>/scaled/`. The original file
/// is never modified; an existing copy with matching source, factor and
/// seed is reused.
pub fn scale_database(db: &DatabaseRef, factor: u32, seed: u64, workdir: &Path) -> Result<DatabaseRef, ScaleError> {
    if factor == 0 {
        return Err(ScaleError::Invalid("factor must be at least 1".into()));
    }
    if db.engine != Engine::Sqlite {
        return Err(ScaleError::Invalid("only sqlite databases can be scaled".into()));
    }
    if factor == 1 {
        return Ok(db.clone());
    }
    let order = fk_topological_order(&db.schema)?;
    let target = scaled_path(workdir, &db.db_id, factor);
    let dir = target.parent().expect("scaled path has a parent").to_path_buf();
    let meta_path = dir.join("scale.json");
    let source_sha = file_sha256(&db.location)?;
    if target.exists() {
        if let Some(meta) = std::fs::read_to_string(&meta_path)
            .ok()
            .and_then(|t| serde_json::from_str::<ScaleMeta>(&t).ok())
        {
            if meta.source_sha256 == source_sha && meta.factor == factor && meta.seed == seed {
                return open_scaled(db, target, factor);
            }
        }
    }
    std::fs::create_dir_all(&dir).map_err(io_err)?;
    let tmp = dir.join(format!(
        ".{}.{}.{}.tmp",
        db.db_id,
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    std::fs::copy(&db.location, &tmp).map_err(io_err)?;
    let result = fill(&tmp, db, &order, factor, seed);
    let (row_counts, profile) = match result {
        Ok(x) => x,
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            return Err(e);
        }
    };
    std::fs::rename(&tmp, &target).map_err(io_err)?;
    let meta = ScaleMeta {
        db_id: db.db_id.clone(),
        source_sha256: source_sha,
        factor,
        seed,
        row_counts,
        profile,
    };
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    std::fs::write(&meta_path, text).map_err(io_err)?;
    open_scaled(db, target, factor)
}

fn open_scaled(db: &DatabaseRef, target: PathBuf, factor: u32) -> Result<DatabaseRef, ScaleError> {
    let mut scaled = DatabaseRef::open(&db.db_id, db.engine, target)?;
    if scaled.schema != db.schema {
        return Err(ScaleError::Verify("schema changed during scaling".into()));
    }
    scaled.scale_factor = factor;
    Ok(scaled)
}

type Filled = (BTreeMap<String, usize>, ScalingProfile);

fn fill(path: &Path, db: &DatabaseRef, order: &TopoOrder, factor: u32, seed: u64) -> Result<Filled, ScaleError> {
    let mut conn = Connection::open(path).map_err(sql_err)?;
    conn.execute_batch("PRAGMA foreign_keys = OFF; PRAGMA journal_mode = OFF; PRAGMA synchronous = OFF;")
        .map_err(sql_err)?;
    let tx = conn.transaction().map_err(sql_err)?;
    let mut profile = ScalingProfile {
        factor,
        seed,
        columns: BTreeMap::new(),
    };
    let mut expected = BTreeMap::new();
    // table -> synthetic rowids, for deferred backfill
    let mut synthetic: HashMap<String, Vec<i64>> = HashMap::new();
    let mut originals: HashMap<String, Vec<Vec<Value>>> = HashMap::new();

    for name in &order.tables {
        let table = db.schema.table(name).expect("ordered table exists");
        let mut rng = table_rng(seed, &table.name);
        let cols: Vec<String> = table.columns.iter().map(|c| quote(&c.name)).collect();
        let rows: Vec<Vec<Value>> = {
            let mut stmt = tx
                .prepare(&format!("SELECT {} FROM {}", cols.join(", "), quote(&table.name)))
                .map_err(sql_err)?;
            let rows = stmt
                .query_map([], |r| (0..cols.len()).map(|i| r.get::<_, Value>(i)).collect())
                .map_err(sql_err)?
                .collect::<Result<Vec<Vec<Value>>, _>>()
                .map_err(sql_err)?;
            rows
        };
        let n = rows.len();
        let m = n * (factor as usize - 1);
        expected.insert(table.name.clone(), n * factor as usize);
        let column = |ci: usize| -> Vec<Value> { rows.iter().map(|r| r[ci].clone()).collect() };

        let mut fk_cols: HashMap<String, (String, bool)> = HashMap::new();
        for (fi, fk) in table.foreign_keys.iter().enumerate() {
            let deferred = order
                .deferred
                .iter()
                .any(|d| d.table == table.name && d.fk_index == fi);
            for c in &fk.columns {
                fk_cols.insert(c.to_lowercase(), (fk.parent_table.clone(), deferred));
            }
        }

        let mut synth: Vec<Vec<Value>> = vec![vec![Value::Null; cols.len()]; m];
        for (ci, col) in table.columns.iter().enumerate() {
            let original = column(ci);
            let sampler = profile_column(table, ci, &original, &fk_cols);
            let values = match &sampler {
                ColumnSampler::ForeignKey { .. } => None,
                ColumnSampler::Fresh { integer } => Some(fresh_values(*integer, &original, m)),
                s if n > 0 => Some(synthesize(s, &original, m, &mut rng)),
                _ => None,
            };
            if let Some(values) = values {
                for (row, v) in synth.iter_mut().zip(values) {
                    row[ci] = v;
                }
            }
            profile
                .columns
                .insert(format!("{}.{}", table.name, col.name), sampler);
        }

        for (fi, fk) in table.foreign_keys.iter().enumerate() {
            if order.deferred.iter().any(|d| d.table == table.name && d.fk_index == fi) {
                continue;
            }
            let pool = key_pool(&tx, &fk.parent_table, &fk.parent_columns)?;
            fill_fk(table, fi, &rows, &mut synth, &pool, &mut rng, |row, ci, v| row[ci] = v)?;
        }

        let insert = format!(
            "INSERT INTO {} ({}) VALUES ({})",
            quote(&table.name),
            cols.join(", "),
            vec!["?"; cols.len()].join(", ")
        );
        let mut stmt = tx.prepare(&insert).map_err(sql_err)?;
        let mut ids = Vec::with_capacity(m);
        for row in &synth {
            stmt.execute(params_from_iter(row.iter())).map_err(sql_err)?;
            ids.push(tx.last_insert_rowid());
        }
        synthetic.insert(table.name.clone(), ids);
        originals.insert(table.name.clone(), rows);
    }

    for d in &order.deferred {
        let table = db.schema.table(&d.table).expect("deferred table exists");
        let fk = &table.foreign_keys[d.fk_index];
        let mut rng = table_rng(seed ^ 0x5eed_f00d, &format!("{}#{}", table.name, d.fk_index));
        let pool = key_pool(&tx, &fk.parent_table, &fk.parent_columns)?;
        let rows = &originals[&table.name];
        let ids = &synthetic[&table.name];
        let mut synth: Vec<Vec<Value>> = vec![vec![Value::Null; table.columns.len()]; ids.len()];
        fill_fk(table, d.fk_index, rows, &mut synth, &pool, &mut rng, |row, ci, v| row[ci] = v)?;
        let sets: Vec<String> = fk.columns.iter().map(|c| format!("{} = ?", quote(c))).collect();
        let mut stmt = tx
            .prepare(&format!(
                "UPDATE {} SET {} WHERE rowid = ?",
                quote(&table.name),
                sets.join(", ")
            ))
            .map_err(sql_err)?;
        let positions: Vec<usize> = fk
            .columns
            .iter()
            .map(|c| column_index(table, c))
            .collect();
        for (row, id) in synth.iter().zip(ids) {
            let mut params: Vec<Value> = positions.iter().map(|&p| row[p].clone()).collect();
            params.push(Value::Integer(*id));
            stmt.execute(params_from_iter(params.iter())).map_err(sql_err)?;
        }
    }
    tx.commit().map_err(sql_err)?;
    verify(&conn, &expected)?;
    Ok((expected, profile))
}

fn column_index(table: &Table, name: &str) -> usize {
    table
        .columns
        .iter()
        .position(|c| c.name.eq_ignore_ascii_case(name))
        .expect("foreign key column exists")
}

fn fill_fk(
    table: &Table,
    fi: usize,
    rows: &[Vec<Value>],
    synth: &mut [Vec<Value>],
    pool: &[Vec<Value>],
    rng: &mut ChaCha8Rng,
    mut set: impl FnMut(&mut Vec<Value>, usize, Value),
) -> Result<(), ScaleError> {
    let fk = &table.foreign_keys[fi];
    let positions: Vec<usize> = fk.columns.iter().map(|c| column_index(table, c)).collect();
    let null_count = rows
        .iter()
        .filter(|r| positions.iter().any(|&p| matches!(r[p], Value::Null)))
        .count();
    let what = format!("{}.{}", table.name, fk.columns.join(","));
    let draws = fk_draws(rng, null_count, rows.len(), synth.len(), pool, &what)?;
    for (row, draw) in synth.iter_mut().zip(draws) {
        for (k, &p) in positions.iter().enumerate() {
            let v = draw.map(|d| pool[d][k].clone()).unwrap_or(Value::Null);
            set(row, p, v);
        }
    }
    Ok(())
}

fn verify(conn: &Connection, expected: &BTreeMap<String, usize>) -> Result<(), ScaleError> {
    let orphans: i64 = conn
        .query_row("SELECT count(*) FROM pragma_foreign_key_check", [], |r| r.get(0))
        .map_err(sql_err)?;
    if orphans > 0 {
        return Err(ScaleError::Verify(format!("{orphans} orphan rows")));
    }
    for (t, &want) in expected {
        let got: i64 = conn
            .query_row(&format!("SELECT count(*) FROM {}", quote(t)), [], |r| r.get(0))
            .map_err(sql_err)?;
        if got as usize != want {
            return Err(ScaleError::Verify(format!("{t} has {got} rows, expected {want}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::Schema;

    fn schema(sql: &str) -> Schema {
        let conn = Connection::open_in_memory().unwrap();
        conn.execute_batch(sql).unwrap();
        Schema::introspect(&conn).unwrap()
    }

    #[test]
    fn parents_first() {
        let s = schema(
            "CREATE TABLE emp (id INTEGER PRIMARY KEY, dept_id INT NOT NULL REFERENCES dept(id));
             CREATE TABLE dept (id INTEGER PRIMARY KEY);",
        );
        let o = fk_topological_order(&s).unwrap();
        assert_eq!(o.tables, ["dept", "emp"]);
        assert!(o.deferred.is_empty());
    }

    #[test]
    fn independent_tables_keep_schema_order() {
        let s = schema("CREATE TABLE s (a INT); CREATE TABLE r (a INT);");
        assert_eq!(fk_topological_order(&s).unwrap().tables, ["s", "r"]);
    }

    #[test]
    fn nullable_self_reference_is_deferred() {
        let s = schema("CREATE TABLE emp (id INTEGER PRIMARY KEY, manager_id INT REFERENCES emp(id));");
        let o = fk_topological_order(&s).unwrap();
        assert_eq!(o.tables, ["emp"]);
        assert_eq!(
            o.deferred,
            [DeferredFk {
                table: "emp".into(),
                fk_index: 0
            }]
        );
    }

    #[test]
    fn cycles() {
        let s = schema(
            "CREATE TABLE a (id INTEGER PRIMARY KEY, b_id INT REFERENCES b(id));
             CREATE TABLE b (id INTEGER PRIMARY KEY, a_id INT NOT NULL REFERENCES a(id));",
        );
        let o = fk_topological_order(&s).unwrap();
        assert_eq!(o.tables, ["a", "b"]);
        assert_eq!(o.deferred.len(), 1);
        let s = schema(
            "CREATE TABLE a (id INTEGER PRIMARY KEY, b_id INT NOT NULL REFERENCES b(id));
             CREATE TABLE b (id INTEGER PRIMARY KEY, a_id INT NOT NULL REFERENCES a(id));",
        );
        assert!(matches!(fk_topological_order(&s), Err(ScaleError::CyclicFk(t)) if t == ["a", "b"]));
        let s = schema("CREATE TABLE e (id INTEGER PRIMARY KEY, m INT NOT NULL REFERENCES e(id));");
        assert!(matches!(fk_topological_order(&s), Err(ScaleError::CyclicFk(_))));
    }

    #[test]
    fn largest_remainder() {
        assert_eq!(quotas(&[120, 80], 1800), [1080, 720]);
        assert_eq!(quotas(&[1, 1, 1], 2), [1, 1, 0]);
        assert_eq!(quotas(&[0, 5], 7), [0, 7]);
        assert_eq!(quotas(&[], 7), Vec::<usize>::new());
    }

    #[test]
    fn suffix_keeps_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = suffixed(&mut rng, "alice@example.com");
        assert_eq!(s.chars().count(), 17);
        assert!(s.starts_with("alice@ex"));
    }
}
