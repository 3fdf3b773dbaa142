use std::collections::BTreeMap;
use std::path::Path;

use rusqlite::types::Value;
use rusqlite::Connection;
use sqleval_core::datastore::{scale_database, Catalog, Schema};

pub const FACTOR: u32 = 10;

pub fn open(path: &Path) -> Connection {
    Connection::open_with_flags(path, rusqlite::OpenFlags::SQLITE_OPEN_READ_ONLY).unwrap()
}

pub fn count(c: &Connection, table: &str) -> usize {
    c.query_row(&format!("SELECT COUNT(*) FROM \"{table}\""), [], |r| r.get::<_, i64>(0))
        .unwrap() as usize
}

pub fn column(c: &Connection, table: &str, col: &str) -> Vec<Value> {
    let mut st = c.prepare(&format!("SELECT \"{col}\" FROM \"{table}\"")).unwrap();
    st.query_map([], |r| r.get::<_, Value>(0))
        .unwrap()
        .map(Result::unwrap)
        .collect()
}

pub fn key(v: &Value) -> String {
    format!("{v:?}")
}

pub fn null_rate(values: &[Value]) -> f64 {
    values.iter().filter(|v| matches!(v, Value::Null)).count() as f64 / values.len().max(1) as f64
}

/// Total variation distance between the empirical value distributions.
pub fn tvd(a: &[Value], b: &[Value]) -> f64 {
    let freq = |xs: &[Value]| {
        let mut m: BTreeMap<String, f64> = BTreeMap::new();
        for x in xs {
            *m.entry(key(x)).or_default() += 1.0 / xs.len() as f64;
        }
        m
    };
    let (fa, fb) = (freq(a), freq(b));
    let keys: std::collections::BTreeSet<&String> = fa.keys().chain(fb.keys()).collect();
    keys.into_iter()
        .map(|k| (fa.get(k).unwrap_or(&0.0) - fb.get(k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
        / 2.0
}

pub fn orphans(c: &Connection, schema: &Schema) -> usize {
    let mut n = 0;
    for t in &schema.tables {
        for fk in &t.foreign_keys {
            let on: Vec<String> = fk
                .columns
                .iter()
                .zip(&fk.parent_columns)
                .map(|(c, p)| format!("p.\"{p}\" = c.\"{c}\""))
                .collect();
            let not_null: Vec<String> = fk.columns.iter().map(|c| format!("c.\"{c}\" IS NOT NULL")).collect();
            let sql = format!(
                "SELECT COUNT(*) FROM \"{}\" c WHERE {} AND NOT EXISTS (SELECT 1 FROM \"{}\" p WHERE {})",
                t.name,
                not_null.join(" AND "),
                fk.parent_table,
                on.join(" AND ")
            );
            n += c.query_row(&sql, [], |r| r.get::<_, i64>(0)).unwrap() as usize;
        }
    }
    n
}

pub struct Fidelity {
    pub exact_counts: bool,
    pub orphans: usize,
    pub max_null_drift: f64,
    pub max_tvd: f64,
}

/// Checks `db_id` scaled by FACTOR against its base with direct SQL.
pub fn fidelity(workdir: &Path, db_id: &str) -> Fidelity {
    let cat = Catalog::load(&workdir.join("catalog.json")).unwrap();
    let base = cat.open(db_id).unwrap();
    let scaled = scale_database(&base, FACTOR, 42, workdir).unwrap();
    assert_eq!(scaled.schema, base.schema, "schema preserved");
    let (b, s) = (open(&base.location), open(&scaled.location));
    let mut out = Fidelity {
        exact_counts: true,
        orphans: orphans(&s, &scaled.schema),
        max_null_drift: 0.0,
        max_tvd: 0.0,
    };
    for t in &base.schema.tables {
        let n = count(&b, &t.name);
        out.exact_counts &= count(&s, &t.name) == n * FACTOR as usize;
        let fk_cols: Vec<&String> = t.foreign_keys.iter().flat_map(|f| &f.columns).collect();
        for c in &t.columns {
            let (bv, sv) = (column(&b, &t.name, &c.name), column(&s, &t.name, &c.name));
            if n >= 100 {
                out.max_null_drift = out.max_null_drift.max((null_rate(&bv) - null_rate(&sv)).abs());
            }
            let distinct: std::collections::BTreeSet<String> = bv.iter().map(key).collect();
            let categorical = distinct.len() <= 20 && !c.pk && !c.unique && !fk_cols.contains(&&c.name);
            if categorical {
                out.max_tvd = out.max_tvd.max(tvd(&bv, &sv));
            }
        }
    }
    out
}
