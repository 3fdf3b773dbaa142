//! Augmentation driven by a persisted run's weak subcategories.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::persist::{load_run, RunStoreError};
use super::run::catalog_path;
use crate::datastore::{Catalog, CatalogError, DEFAULT_TIMEOUT_MS};
use crate::gateway::{Gateway, GatewayError, GatewayOptions, GenConfig, ModelAdapter};
use crate::metrics::Metric;
use crate::sql::Subcategory;
use crate::workload::{
    augment_workload, select_weak_subcategories, AugmentParams, StoreError, ValidateOptions, WorkloadStore,
    DEFAULT_MIN_SUPPORT,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentJob {
    pub run_id: String,
    pub threshold: f64,
    pub per_subcat: usize,
    #[serde(default = "default_metric")]
    pub metric: Metric,
    #[serde(default = "default_support")]
    pub min_support: usize,
    /// Restrict weakness to one model's scores.
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_generator")]
    pub generator: ModelAdapter,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub budget: Option<usize>,
}

fn default_metric() -> Metric {
    Metric::EA
}
fn default_support() -> usize {
    DEFAULT_MIN_SUPPORT
}
fn default_generator() -> ModelAdapter {
    ModelAdapter::template("template")
}

impl AugmentJob {
    pub fn new(run_id: &str, threshold: f64, per_subcat: usize) -> Self {
        AugmentJob {
            run_id: run_id.to_string(),
            threshold,
            per_subcat,
            metric: default_metric(),
            min_support: default_support(),
            model: None,
            generator: default_generator(),
            seed: 0,
            budget: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AugmentJobError {
    #[error("{0}")]
    Invalid(String),
    #[error("no weak subcategories below threshold {0}")]
    NoWeakSubcategories(f64),
    #[error(transparent)]
    Run(#[from] RunStoreError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub workload_id: String,
    pub parent_version: u32,
    pub version: u32,
    pub weak: Vec<Subcategory>,
    pub added: Vec<String>,
    pub fills: std::collections::BTreeMap<Subcategory, crate::workload::augment::SubcategoryFill>,
}

/// Selects weak subcategories from the run's report, augments the latest
/// version of the run's workload and publishes the result.
pub fn augment_from_run(workdir: &Path, job: &AugmentJob) -> Result<AugmentSummary, AugmentJobError> {
    if !(0.0..=1.0).contains(&job.threshold) {
        return Err(AugmentJobError::Invalid("threshold must lie in [0, 1]".into()));
    }
    if job.per_subcat == 0 {
        return Err(AugmentJobError::Invalid("per_subcat must be >= 1".into()));
    }
    job.generator.validate().map_err(AugmentJobError::Invalid)?;
    let run = load_run(workdir, &job.run_id)?;
    let workload_id = run
        .config
        .workload
        .id
        .clone()
        .ok_or_else(|| AugmentJobError::Invalid("run did not use a stored workload".into()))?;
    let weak: BTreeSet<Subcategory> =
        select_weak_subcategories(&run.report, job.metric, job.threshold, job.min_support, job.model.as_deref());
    if weak.is_empty() {
        return Err(AugmentJobError::NoWeakSubcategories(job.threshold));
    }
    let catalog = Catalog::load(&catalog_path(&run.config, workdir))?;
    let store = WorkloadStore::new(workdir.join("workloads"));
    let w = store.load(&workload_id, None, &catalog, ValidateOptions::default())?;
    let gateway = Gateway::new(GatewayOptions {
        cache_dir: run.config.cache.then(|| workdir.join("cache")),
        ..GatewayOptions::default()
    });
    let gen = GenConfig {
        llm_id: run.config.llm_id.clone(),
        temperature: run.config.temperature,
    };
    let params = AugmentParams {
        k_per_subcat: job.per_subcat,
        budget: job.budget,
        seed: job.seed,
        run_id: &job.run_id,
        gen: &gen,
        timeout_ms: DEFAULT_TIMEOUT_MS,
    };
    let out = augment_workload(&w, &weak, &gateway, &job.generator, &catalog, &params)?;
    let note = format!("augmented from run {} ({} new points)", job.run_id, out.added.len());
    store.publish(&out.workload, Some(&note))?;
    Ok(AugmentSummary {
        workload_id,
        parent_version: w.version,
        version: out.workload.version,
        weak: weak.into_iter().collect(),
        added: out.added,
        fills: out.fills,
    })
}
