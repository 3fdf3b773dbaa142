//! Workload augmentation: new validated data points in weak subcategories.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{query_fingerprint, DataPoint, Provenance, Split, Workload};
use crate::datastore::{execute_query, Catalog, DatabaseRef};
use crate::gateway::{AugmentRequest, CandidatePair, Exemplar, GatewayError, GenConfig, Gateway, ModelAdapter};
use crate::metrics::Metric;
use crate::pipeline::RunReport;
use crate::sql::{classify, parse_sql, SqlDialect, Subcategory};

pub const DEFAULT_MIN_SUPPORT: usize = 3;
pub const MAX_EXEMPLARS: usize = 3;

/// Subcategories scoring below `theta` with at least `min_support` distinct
/// data points.
/// With no model given, a subcategory is weak if any model is weak on it.
pub fn select_weak_subcategories(
    report: &RunReport,
    metric: Metric,
    theta: f64,
    min_support: usize,
    model: Option<&str>,
) -> BTreeSet<Subcategory> {
    let mut out = BTreeSet::new();
    for m in &report.models {
        if model.is_some_and(|id| id != m.model_id) {
            continue;
        }
        let Some(scores) = m.metrics.get(&metric) else { continue };
        for (sub, s) in &scores.subcategories {
            if s.data_points >= min_support && s.score.is_some_and(|v| v < theta) {
                out.insert(*sub);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rejection {
    ParseFailure,
    LabelMismatch,
    UnknownDb,
    ExecFailure,
    Duplicate,
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Rejection::ParseFailure => "parse-failure",
            Rejection::LabelMismatch => "label-mismatch",
            Rejection::UnknownDb => "unknown-db",
            Rejection::ExecFailure => "exec-failure",
            Rejection::Duplicate => "duplicate",
        })
    }
}

/// Known query fingerprints per database, for duplicate detection.
#[derive(Debug, Default)]
pub struct FingerprintIndex {
    seen: HashSet<(String, u64)>,
    dbs: HashMap<String, DatabaseRef>,
}

impl FingerprintIndex {
    pub fn from_workload(w: &Workload, catalog: &Catalog) -> Self {
        let mut idx = FingerprintIndex::default();
        for dp in &w.data_points {
            if let (Ok(ast), Some(db)) = (dp.parse(), idx.db(catalog, &dp.db_id)) {
                let fp = query_fingerprint(&ast, Some(&db.schema.column_map()));
                idx.seen.insert((dp.db_id.clone(), fp));
            }
        }
        idx
    }

    fn db(&mut self, catalog: &Catalog, db_id: &str) -> Option<DatabaseRef> {
        if let Some(db) = self.dbs.get(db_id) {
            return Some(db.clone());
        }
        let db = catalog.open(db_id).ok()?;
        self.dbs.insert(db_id.to_string(), db.clone());
        Some(db)
    }

    pub fn contains(&self, db_id: &str, fp: u64) -> bool {
        self.seen.contains(&(db_id.to_string(), fp))
    }
}

/// Accepts a pair iff it parses, classifies to `target`, executes on its
/// database and is structurally new there. Accepted pairs join `index`.
pub fn validate_candidate(
    pair: &CandidatePair,
    target: Subcategory,
    catalog: &Catalog,
    index: &mut FingerprintIndex,
    timeout_ms: u64,
) -> Result<(), Rejection> {
    let ast = parse_sql(&pair.sql, SqlDialect::Sqlite).map_err(|_| Rejection::ParseFailure)?;
    if classify(&ast).subcategory != target {
        return Err(Rejection::LabelMismatch);
    }
    if !catalog.contains(&pair.db_id) {
        return Err(Rejection::UnknownDb);
    }
    let db = index.db(catalog, &pair.db_id).ok_or(Rejection::UnknownDb)?;
    execute_query(&db, &pair.sql, timeout_ms, 1).map_err(|_| Rejection::ExecFailure)?;
    let fp = query_fingerprint(&ast, Some(&db.schema.column_map()));
    if !index.seen.insert((pair.db_id.clone(), fp)) {
        return Err(Rejection::Duplicate);
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubcategoryFill {
    pub requested: usize,
    pub accepted: usize,
    pub attempts: usize,
    pub rejections: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentOutcome {
    pub workload: Workload,
    pub added: Vec<String>,
    pub fills: BTreeMap<Subcategory, SubcategoryFill>,
}

impl AugmentOutcome {
    /// Subcategories that received fewer than the requested points.
    pub fn shortfalls(&self) -> Vec<(Subcategory, usize)> {
        self.fills
            .iter()
            .filter(|(_, f)| f.accepted < f.requested)
            .map(|(s, f)| (*s, f.requested - f.accepted))
            .collect()
    }
}

pub struct AugmentParams<'a> {
    pub k_per_subcat: usize,
    /// Attempts per subcategory; defaults to `5 * k`.
    pub budget: Option<usize>,
    pub seed: u64,
    pub run_id: &'a str,
    pub gen: &'a GenConfig,
    pub timeout_ms: u64,
}

/// Builds version `w.version + 1` with up to `k` new points per weak
/// subcategory. Shortfalls are reported, not treated as errors.
pub fn augment_workload(
    w: &Workload,
    weak: &BTreeSet<Subcategory>,
    gateway: &Gateway,
    adapter: &ModelAdapter,
    catalog: &Catalog,
    params: &AugmentParams<'_>,
) -> Result<AugmentOutcome, GatewayError> {
    let mut index = FingerprintIndex::from_workload(w, catalog);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut db_ids: Vec<String> = w.data_points.iter().map(|d| d.db_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    if db_ids.is_empty() {
        db_ids = catalog.ids().map(str::to_string).collect();
    }
    let version = w.version + 1;
    let mut data_points = w.data_points.clone();
    let mut added = Vec::new();
    let mut fills = BTreeMap::new();
    let budget = params.budget.unwrap_or(5 * params.k_per_subcat);

    for &target in weak {
        let mut fill = SubcategoryFill {
            requested: params.k_per_subcat,
            ..Default::default()
        };
        let db_id = db_ids[rng.random_range(0..db_ids.len())].clone();
        let schema_text = index.db(catalog, &db_id).map(|d| d.schema.prompt_text()).unwrap_or_default();
        let exemplars: Vec<Exemplar> = w
            .train_points()
            .filter(|d| d.label().subcategory == target)
            .take(MAX_EXEMPLARS)
            .map(|d| Exemplar {
                question: d.question.clone(),
                sql: d.gt_sql.clone(),
            })
            .collect();
        let mut attempt = 0u32;
        while fill.accepted < params.k_per_subcat && (attempt as usize) < budget {
            let req = AugmentRequest {
                target,
                db_id: db_id.clone(),
                schema_text: schema_text.clone(),
                exemplars: exemplars.clone(),
                attempt,
            };
            attempt += 1;
            fill.attempts += 1;
            let pair = gateway.generate_candidate(adapter, &req, params.gen)?;
            match validate_candidate(&pair, target, catalog, &mut index, params.timeout_ms) {
                Ok(()) => {
                    fill.accepted += 1;
                    let id = format!("{}-v{}-{}-{}", w.workload_id, version, target, fill.accepted);
                    added.push(id.clone());
                    data_points.push(DataPoint {
                        id,
                        question: pair.question,
                        gt_sql: pair.sql,
                        db_id: pair.db_id,
                        split: Split::Eval,
                        provenance: Provenance::Augmented {
                            model_id: adapter.model_id.clone(),
                            run_id: params.run_id.to_string(),
                        },
                        label: Some(target.into()),
                    });
                }
                Err(r) => *fill.rejections.entry(r.to_string()).or_default() += 1,
            }
        }
        if fill.accepted == 0 {
            tracing::warn!(subcategory = %target, "no candidate accepted");
        }
        fills.insert(target, fill);
    }
    Ok(AugmentOutcome {
        workload: Workload {
            workload_id: w.workload_id.clone(),
            version,
            parent_version: Some(w.version),
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            data_points,
        },
        added,
        fills,
    })
}
