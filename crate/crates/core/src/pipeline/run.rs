//! End-to-end evaluation: scale, align, generate, evaluate, aggregate,
//! persist.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use sha2::{Digest, Sha256};

use super::aggregate::{aggregate, RunReport};
use super::config::{ConfigError, RunConfig, WorkloadRef};
use super::log::RunLog;
use super::persist::{persist_run, RunArtifacts, RunStoreError, WallClock};
use super::record::{crash_record, evaluate_datapoint, execute_ground_truth, DataPointRecord, EvalSettings, GtExecution, TimingRow};
use crate::datastore::{scale_database, Catalog, CatalogError, DatabaseRef, ScaleError};
use crate::gateway::{Exemplar, Gateway, GatewayOptions, GenerationRecord, GenerationRequest};
use crate::workload::{align_workload, load_workload, AlignError, DataPoint, StoreError, ValidateOptions, Workload, WorkloadStore};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("workload: {0}")]
    Workload(String),
    #[error(transparent)]
    Scale(#[from] ScaleError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Store(#[from] RunStoreError),
}

impl From<StoreError> for RunError {
    fn from(e: StoreError) -> Self {
        RunError::Workload(e.to_string())
    }
}

/// Where a run reads and writes, and how it reports progress.
#[derive(Clone)]
pub struct RunContext {
    pub workdir: PathBuf,
    pub log: Arc<RunLog>,
    /// Set to stop scheduling new tasks; finished records are persisted.
    pub cancel: Arc<AtomicBool>,
    /// Built from the config when absent.
    pub gateway: Option<Arc<Gateway>>,
}

impl RunContext {
    pub fn new(workdir: impl Into<PathBuf>) -> Self {
        RunContext {
            workdir: workdir.into(),
            log: Arc::new(RunLog::new()),
            cancel: Arc::new(AtomicBool::new(false)),
            gateway: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub report: RunReport,
    pub records: Vec<DataPointRecord>,
    pub wall: WallClock,
}

pub fn catalog_path(cfg: &RunConfig, workdir: &Path) -> PathBuf {
    cfg.catalog.clone().unwrap_or_else(|| workdir.join("catalog.json"))
}

pub fn load_workload_ref(r: &WorkloadRef, workdir: &Path, catalog: &Catalog) -> Result<Workload, RunError> {
    let opts = ValidateOptions::default();
    match (&r.id, &r.path) {
        (Some(id), _) => Ok(WorkloadStore::new(workdir.join("workloads")).load(id, r.version, catalog, opts)?),
        (None, Some(p)) => load_workload(p, catalog, opts).map_err(|e| RunError::Workload(e.to_string())),
        (None, None) => Err(ConfigError::Invalid("workload needs an id or a path".into()).into()),
    }
}

/// `run-<utc timestamp>-<config hash>` unless the config names one.
pub fn resolve_run_id(cfg: &RunConfig) -> String {
    if let Some(id) = &cfg.run_id {
        return id.clone();
    }
    let digest = Sha256::digest(serde_json::to_vec(cfg).expect("config serializes"));
    let hex: String = digest[..3].iter().map(|b| format!("{b:02x}")).collect();
    format!("run-{}-{hex}", chrono::Utc::now().format("%Y%m%dT%H%M%S%3f"))
}

/// Runs `f` over `items` on `workers` threads; results keep input order.
/// Items not started before cancellation yield `None`.
fn pool<T: Sync, R: Send>(workers: usize, items: &[T], cancel: &AtomicBool, f: impl Fn(&T) -> R + Sync) -> Vec<Option<R>> {
    let next = AtomicUsize::new(0);
    let mut out: Vec<Option<R>> = Vec::with_capacity(items.len());
    out.resize_with(items.len(), || None);
    let slots = Mutex::new(out);
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                if cancel.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("pool slots")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("pool slots")
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

pub fn run_evaluation(cfg: &RunConfig, ctx: &RunContext) -> Result<RunOutcome, RunError> {
    let log = &ctx.log;
    let result = run_inner(cfg, ctx);
    if let Err(e) = &result {
        log.error("run", format!("run failed: {e}"));
    }
    log.close();
    result
}

fn run_inner(cfg: &RunConfig, ctx: &RunContext) -> Result<RunOutcome, RunError> {
    cfg.validate()?;
    let started = Instant::now();
    let started_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
    let log = &ctx.log;
    let run_id = resolve_run_id(cfg);
    let mut stage_ms = BTreeMap::new();
    log.info("setup", format!("run {run_id} starting"));

    let catalog = Catalog::load(&catalog_path(cfg, &ctx.workdir))?;
    let mut workload = load_workload_ref(&cfg.workload, &ctx.workdir, &catalog)?;
    log.info(
        "setup",
        format!("workload {} v{} with {} data points", workload.workload_id, workload.version, workload.data_points.len()),
    );
    let exemplar_pool: Vec<Exemplar> = match &cfg.exemplars {
        Some(r) => load_workload_ref(r, &ctx.workdir, &catalog)?.train_points().map(exemplar).collect(),
        None => workload.train_points().map(exemplar).collect(),
    };

    let source_version = workload.version;

    // (1) scaling
    let t = Instant::now();
    let mut db_ids: Vec<String> = workload.eval_points().map(|d| d.db_id.clone()).collect();
    db_ids.sort();
    db_ids.dedup();
    let mut dbs: BTreeMap<(String, u32), DatabaseRef> = BTreeMap::new();
    for id in &db_ids {
        let base = catalog.open(id)?;
        for &f in &cfg.scale_factors {
            let db = if f == 1 {
                base.clone()
            } else {
                log.info("scale", format!("scaling {id} by {f}"));
                scale_database(&base, f, cfg.seed, &ctx.workdir)?
            };
            dbs.insert((id.clone(), f), db);
        }
    }
    stage_ms.insert("scale".to_string(), ms(t));

    // (2) alignment
    if let Some(target) = &cfg.alignment_target {
        workload = align_workload(&workload, target, cfg.seed)?;
        log.info(
            "align",
            format!("aligned workload {} has {} eval points", workload.workload_id, workload.eval_points().count()),
        );
    }
    let points: Vec<&DataPoint> = workload.eval_points().collect();
    if points.is_empty() {
        return Err(RunError::Workload("no eval data points".into()));
    }

    let settings = EvalSettings::from_config(cfg);
    let timing_lock = Mutex::new(());
    let n_models = cfg.models.len() as u64;
    let n_iter = u64::from(cfg.iterations);
    let n_f = cfg.scale_factors.len() as u64;
    let n_dp = points.len() as u64;
    log.add_total(n_dp * n_f + n_models * n_iter * n_dp + n_models * n_iter * n_f * n_dp);
    let every = (n_dp / 2).max(1);

    // ground truth, once per (data point, scale factor)
    let t = Instant::now();
    let gt_executions = AtomicU64::new(0);
    let gt_tasks: Vec<(usize, u32)> = cfg.scale_factors.iter().flat_map(|&f| (0..points.len()).map(move |i| (i, f))).collect();
    let gt_results = pool(cfg.concurrency, &gt_tasks, &ctx.cancel, |&(i, f)| {
        let dp = points[i];
        gt_executions.fetch_add(1, Ordering::SeqCst);
        let db = &dbs[&(dp.db_id.clone(), f)];
        let r = catch_unwind(AssertUnwindSafe(|| execute_ground_truth(dp, db, &settings, &timing_lock)))
            .unwrap_or_else(|p| GtExecution {
                result: Err(crate::datastore::ExecError::Exec(panic_message(p))),
                timing: None,
            });
        log.tick("ground-truth", every);
        r
    });
    let mut gt: BTreeMap<(usize, u32), GtExecution> = BTreeMap::new();
    for (task, r) in gt_tasks.iter().zip(gt_results) {
        if let Some(r) = r {
            if let Err(e) = &r.result {
                log.warn("ground-truth", format!("{} at x{}: {e}", points[task.0].id, task.1));
            }
            gt.insert(*task, r);
        }
    }
    stage_ms.insert("ground_truth".to_string(), ms(t));

    // (3) generation, once per model and iteration
    let t = Instant::now();
    let gateway = match &ctx.gateway {
        Some(g) => g.clone(),
        None => Arc::new(Gateway::new(GatewayOptions {
            cache_dir: cfg.cache.then(|| ctx.workdir.join("cache")),
            max_in_flight: cfg.max_in_flight.max(1),
            ..GatewayOptions::default()
        })),
    };
    let calls_before = gateway.calls();
    let gen_config = cfg.gen_config();
    let base_factor = cfg.scale_factors[0];
    let mut generations: BTreeMap<(usize, u32), Vec<GenerationRecord>> = BTreeMap::new();
    'gen: for (mi, adapter) in cfg.models.iter().enumerate() {
        for iteration in 1..=cfg.iterations {
            if ctx.cancel.load(Ordering::SeqCst) {
                break 'gen;
            }
            let n_ex = adapter.settings.icl_examples.unwrap_or(0);
            let reqs: Vec<GenerationRequest> = points
                .iter()
                .map(|dp| {
                    let db = &dbs[&(dp.db_id.clone(), base_factor)];
                    GenerationRequest {
                        dp_id: dp.id.clone(),
                        question: dp.question.clone(),
                        schema_text: db.schema.prompt_text(),
                        db_id: dp.db_id.clone(),
                        iteration,
                        gt_sql: Some(dp.gt_sql.clone()),
                        schema_map: Some(db.schema.column_map()),
                        exemplars: exemplar_pool.iter().take(n_ex).cloned().collect(),
                    }
                })
                .collect();
            log.info("generate", format!("{} iteration {iteration}: {} requests", adapter.model_id, reqs.len()));
            let recs = if cfg.batch {
                gateway.submit_batch(adapter, &reqs, &gen_config)
            } else {
                reqs.iter().map(|r| gateway.generate_sql(adapter, r, &gen_config)).collect()
            };
            for r in &recs {
                if let Some(e) = &r.error {
                    log.warn("generate", format!("{} {}: {e}", adapter.model_id, r.dp_id));
                }
                log.tick("generate", every);
            }
            generations.insert((mi, iteration), recs);
        }
    }
    let gateway_calls = gateway.calls() - calls_before;
    stage_ms.insert("generate".to_string(), ms(t));

    // evaluation tasks in canonical order: model, iteration, factor, point
    let t = Instant::now();
    let mut tasks = Vec::new();
    for ((mi, iteration), recs) in &generations {
        for &f in &cfg.scale_factors {
            for (i, rec) in recs.iter().enumerate() {
                if gt.contains_key(&(i, f)) {
                    tasks.push((*mi, *iteration, f, i, rec));
                }
            }
        }
    }
    let evaluated = pool(cfg.concurrency, &tasks, &ctx.cancel, |&(_, _, f, i, rec)| {
        let dp = points[i];
        let db = &dbs[&(dp.db_id.clone(), f)];
        let out = catch_unwind(AssertUnwindSafe(|| {
            evaluate_datapoint(dp, rec, db, f, &gt[&(i, f)], &settings, &timing_lock)
        }));
        log.tick("evaluate", every);
        match out {
            Ok(r) => r,
            Err(p) => {
                let msg = panic_message(p);
                log.error("evaluate", format!("{} {}: evaluation crashed: {msg}", rec.model_id, dp.id));
                let timing = TimingRow {
                    dp_id: dp.id.clone(),
                    model_id: rec.model_id.clone(),
                    iteration: rec.iteration,
                    scale_factor: f,
                    latency_ms: rec.latency_ms,
                    cached: rec.cached,
                    gt_median_ms: None,
                    gen_median_ms: None,
                };
                (crash_record(dp, rec, f, &settings, &msg), timing)
            }
        }
    });
    let (records, timings): (Vec<DataPointRecord>, Vec<TimingRow>) = evaluated.into_iter().flatten().unzip();
    stage_ms.insert("evaluate".to_string(), ms(t));
    let cancelled = ctx.cancel.load(Ordering::SeqCst);
    if records.is_empty() {
        return Err(RunError::Workload("run cancelled before any data point was evaluated".into()));
    }

    // (4) aggregation
    let report = aggregate(&records);
    let gt_executions = gt_executions.load(Ordering::SeqCst);
    if cancelled {
        log.warn("run", format!("cancelled; persisting {} of {} records", records.len(), tasks.len()));
    }
    log.info(
        "run",
        format!(
            "{} records, {} repair suggestions, {gateway_calls} model calls; persisting run {run_id}",
            records.len(),
            report.repair_count()
        ),
    );

    // (5) persistence; no events are appended after the log snapshot
    let wall = WallClock {
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        total_ms: ms(started),
        stage_ms,
        gateway_calls,
        gt_executions,
        cancelled,
    };
    let logs = log.snapshot();
    // pin the workload version actually evaluated
    let mut stored_cfg = cfg.clone();
    if stored_cfg.workload.id.is_some() {
        stored_cfg.workload.version = Some(source_version);
    }
    let run_dir = persist_run(
        &ctx.workdir,
        &RunArtifacts {
            run_id: &run_id,
            config: &stored_cfg,
            records: &records,
            report: &report,
            logs: &logs,
            timings: &timings,
            wall: &wall,
        },
    )?;
    Ok(RunOutcome {
        run_id,
        run_dir,
        report,
        records,
        wall,
    })
}

fn exemplar(d: &DataPoint) -> Exemplar {
    Exemplar {
        question: d.question.clone(),
        sql: d.gt_sql.clone(),
    }
}
