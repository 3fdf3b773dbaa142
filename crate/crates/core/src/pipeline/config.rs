//! Run configuration, accepted as JSON or YAML.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datastore::{DEFAULT_REPETITIONS, DEFAULT_ROW_CAP, DEFAULT_TIMEOUT_MS};
use crate::gateway::{GenConfig, ModelAdapter, DEFAULT_MAX_IN_FLIGHT};
use crate::metrics::{ComparisonPolicy, Metric, DEFAULT_FLOOR_MS, DEFAULT_TAU};
use crate::sql::MatchMode;
use crate::workload::TargetDistribution;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {0}: {1}")]
    Io(PathBuf, String),
    #[error("cannot parse config: {0}")]
    Format(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// A stored workload (`id` plus optional version, latest by default) or a
/// standalone JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadRef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl WorkloadRef {
    pub fn stored(id: &str, version: Option<u32>) -> Self {
        WorkloadRef {
            id: Some(id.to_string()),
            version,
            path: None,
        }
    }
}

fn default_metrics() -> Vec<Metric> {
    Metric::ALL.to_vec()
}
fn one() -> u32 {
    1
}
fn default_factors() -> Vec<u32> {
    vec![1]
}
fn default_llm() -> String {
    GenConfig::default().llm_id
}
fn default_tau() -> f64 {
    DEFAULT_TAU
}
fn default_floor() -> f64 {
    DEFAULT_FLOOR_MS
}
fn default_theta() -> f64 {
    0.6
}
fn default_workers() -> usize {
    4
}
fn default_in_flight() -> usize {
    DEFAULT_MAX_IN_FLIGHT
}
fn yes() -> bool {
    true
}
fn default_reps() -> usize {
    DEFAULT_REPETITIONS
}
fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_MS
}
fn default_cap() -> usize {
    DEFAULT_ROW_CAP
}
fn default_depth() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Generated from the config hash and start time when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    pub workload: WorkloadRef,
    /// Train-split source for in-context exemplars, if not the workload itself.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exemplars: Option<WorkloadRef>,
    /// Defaults to `<workdir>/catalog.json`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<PathBuf>,
    pub models: Vec<ModelAdapter>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    #[serde(default = "one")]
    pub iterations: u32,
    #[serde(default = "default_llm")]
    pub llm_id: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_floor")]
    pub floor_ms: f64,
    /// Default weakness threshold for augmentation.
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_factors")]
    pub scale_factors: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment_target: Option<TargetDistribution>,
    #[serde(default)]
    pub seed: u64,
    /// Evaluation worker count.
    #[serde(default = "default_workers")]
    pub concurrency: usize,
    /// In-flight model requests per batch.
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Batch generation; `false` generates one request at a time.
    #[serde(default = "yes")]
    pub batch: bool,
    #[serde(default = "yes")]
    pub cache: bool,
    #[serde(default)]
    pub em_mode: MatchMode,
    #[serde(default)]
    pub policy: ComparisonPolicy,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_cap")]
    pub row_cap: usize,
    #[serde(default = "default_depth")]
    pub repair_depth: usize,
}

impl RunConfig {
    /// A config with defaults everywhere except the required fields.
    pub fn new(workload: WorkloadRef, models: Vec<ModelAdapter>) -> Self {
        let v = serde_json::json!({ "workload": workload, "models": models });
        serde_json::from_value(v).expect("defaults deserialize")
    }

    pub fn from_str(text: &str, path_hint: Option<&Path>) -> Result<Self, ConfigError> {
        let json = match path_hint.and_then(|p| p.extension()).and_then(|e| e.to_str()) {
            Some("yaml") | Some("yml") => false,
            Some("json") => true,
            _ => text.trim_start().starts_with('{'),
        };
        let cfg: RunConfig = if json {
            serde_json::from_str(text).map_err(|e| ConfigError::Format(e.to_string()))?
        } else {
            serde_yaml::from_str(text).map_err(|e| ConfigError::Format(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e.to_string()))?;
        Self::from_str(&text, Some(path))
    }

    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            llm_id: self.llm_id.clone(),
            temperature: self.temperature,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.models.is_empty() {
            return bad("at least one model is required".into());
        }
        let mut ids = HashSet::new();
        for m in &self.models {
            m.validate().map_err(ConfigError::Invalid)?;
            if !ids.insert(m.model_id.as_str()) {
                return bad(format!("duplicate model_id `{}`", m.model_id));
            }
        }
        if self.metrics.is_empty() {
            return bad("metrics must not be empty".into());
        }
        if self.metrics.iter().collect::<HashSet<_>>().len() != self.metrics.len() {
            return bad("metrics must not repeat".into());
        }
        if self.iterations < 1 {
            return bad("iterations must be >= 1".into());
        }
        if self.scale_factors.is_empty() {
            return bad("scale_factors must not be empty".into());
        }
        if self.scale_factors.contains(&0) || self.scale_factors.windows(2).any(|w| w[0] >= w[1]) {
            return bad("scale_factors must be >= 1 and strictly ascending".into());
        }
        for (name, v) in [("temperature", self.temperature), ("tau", self.tau), ("floor_ms", self.floor_ms)] {
            if !(v >= 0.0) {
                return bad(format!("{name} must be >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return bad("theta must lie in [0, 1]".into());
        }
        if !self.policy.is_valid() {
            return bad("comparison tolerances must be non-negative".into());
        }
        if let Some(t) = &self.alignment_target {
            t.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        match (&self.workload.id, &self.workload.path) {
            (None, None) => return bad("workload needs an id or a path".into()),
            (Some(_), Some(_)) => return bad("workload takes an id or a path, not both".into()),
            _ => {}
        }
        if let Some(id) = &self.run_id {
            if !valid_id(id) {
                return bad(format!("run_id `{id}` may use only letters, digits, `-`, `_` and `.`"));
            }
        }
        Ok(())
    }
}

pub fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}
