//! Scores at overall, category and subcategory level, derived from
//! per-data-point records alone.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::record::DataPointRecord;
use crate::metrics::Metric;
use crate::repair::RepairSuggestion;
use crate::sql::{Category, Subcategory};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Score {
    /// Mean outcome value; a success rate for boolean metrics.
    pub score: Option<f64>,
    /// Records with a present outcome.
    pub support: usize,
    /// Distinct data points behind those records.
    pub data_points: usize,
}

#[derive(Default)]
struct Acc<'a> {
    sum: f64,
    support: usize,
    dps: BTreeSet<&'a str>,
}

impl<'a> Acc<'a> {
    fn add(&mut self, r: &'a DataPointRecord, m: Metric) {
        if let Some(v) = r.outcome(m).and_then(|o| o.value) {
            self.sum += v.as_f64();
            self.support += 1;
            self.dps.insert(&r.dp_id);
        }
    }

    fn score(&self) -> Score {
        Score {
            score: (self.support > 0).then(|| self.sum / self.support as f64),
            support: self.support,
            data_points: self.dps.len(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    pub overall: Score,
    pub categories: BTreeMap<Category, Score>,
    pub subcategories: BTreeMap<Subcategory, Score>,
    /// Overall score at each scale factor, all iterations pooled.
    pub by_scale_factor: BTreeMap<u32, Score>,
    /// Overall score of each iteration at the base scale factor.
    pub by_iteration: BTreeMap<u32, Score>,
    pub iteration_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model_id: String,
    pub records: usize,
    /// Share of generations that failed at the gateway.
    pub generation_error_rate: f64,
    /// Share of generated queries that failed to execute.
    pub execution_error_rate: f64,
    pub metrics: BTreeMap<Metric, MetricScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorAnalysisEntry {
    pub dp_id: String,
    pub model_id: String,
    pub iteration: u32,
    pub scale_factor: u32,
    pub question: String,
    pub generated_sql: String,
    pub gt_sql: String,
    pub suggestions: Vec<RepairSuggestion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub metrics: Vec<Metric>,
    pub scale_factors: Vec<u32>,
    pub iterations: Vec<u32>,
    pub data_points: usize,
    pub models: Vec<ModelReport>,
    /// Every EA failure, with repair suggestions where one was found.
    pub error_analysis: Vec<ErrorAnalysisEntry>,
}

impl RunReport {
    pub fn model(&self, model_id: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.model_id == model_id)
    }

    pub fn scores(&self, model_id: &str, metric: Metric) -> Option<&MetricScores> {
        self.model(model_id)?.metrics.get(&metric)
    }

    pub fn repair_count(&self) -> usize {
        self.error_analysis.iter().map(|e| e.suggestions.len()).sum()
    }

    /// Subcategories present in any model's scores.
    pub fn populated_subcategories(&self) -> BTreeSet<Subcategory> {
        self.models
            .iter()
            .flat_map(|m| m.metrics.values())
            .flat_map(|s| s.subcategories.keys().copied())
            .collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Groups by the ground-truth label. Fine-grained and overall scores pool
/// every iteration at the smallest scale factor.
pub fn aggregate(records: &[DataPointRecord]) -> RunReport {
    let mut model_ids: Vec<&str> = Vec::new();
    for r in records {
        if !model_ids.contains(&r.model_id.as_str()) {
            model_ids.push(&r.model_id);
        }
    }
    let present: BTreeSet<Metric> = records.iter().flat_map(|r| r.outcomes.iter().map(|o| o.metric)).collect();
    let metrics: Vec<Metric> = Metric::ALL.into_iter().filter(|m| present.contains(m)).collect();
    let scale_factors: Vec<u32> = records.iter().map(|r| r.scale_factor).collect::<BTreeSet<_>>().into_iter().collect();
    let iterations: Vec<u32> = records.iter().map(|r| r.iteration).collect::<BTreeSet<_>>().into_iter().collect();
    let base = scale_factors.first().copied().unwrap_or(1);
    let data_points = records.iter().map(|r| r.dp_id.as_str()).collect::<BTreeSet<_>>().len();

    let models = model_ids
        .iter()
        .map(|id| {
            let mine: Vec<&DataPointRecord> = records.iter().filter(|r| r.model_id == *id).collect();
            let at_base: Vec<&DataPointRecord> = mine.iter().copied().filter(|r| r.scale_factor == base).collect();
            let rate = |f: &dyn Fn(&DataPointRecord) -> bool| {
                if at_base.is_empty() {
                    0.0
                } else {
                    at_base.iter().filter(|r| f(r)).count() as f64 / at_base.len() as f64
                }
            };
            let generation_error_rate = rate(&|r| r.generation.error.is_some());
            let execution_error_rate = rate(&|r| r.gen_exec_error.is_some());
            let per_metric = metrics
                .iter()
                .map(|&m| (m, metric_scores(&mine, &at_base, m)))
                .collect();
            ModelReport {
                model_id: id.to_string(),
                records: mine.len(),
                generation_error_rate,
                execution_error_rate,
                metrics: per_metric,
            }
        })
        .collect();

    let error_analysis = records
        .iter()
        .filter(|r| r.outcome(Metric::EA).and_then(|o| o.as_bool()) == Some(false))
        .map(|r| ErrorAnalysisEntry {
            dp_id: r.dp_id.clone(),
            model_id: r.model_id.clone(),
            iteration: r.iteration,
            scale_factor: r.scale_factor,
            question: r.question.clone(),
            generated_sql: r.generation.sql_text.clone(),
            gt_sql: r.gt_sql.clone(),
            suggestions: r.repairs.clone(),
        })
        .collect();

    RunReport {
        metrics,
        scale_factors,
        iterations,
        data_points,
        models,
        error_analysis,
    }
}

fn metric_scores(all: &[&DataPointRecord], at_base: &[&DataPointRecord], m: Metric) -> MetricScores {
    let mut overall = Acc::default();
    let mut cats: BTreeMap<Category, Acc> = BTreeMap::new();
    let mut subs: BTreeMap<Subcategory, Acc> = BTreeMap::new();
    let mut iters: BTreeMap<u32, Acc> = BTreeMap::new();
    for r in at_base {
        overall.add(r, m);
        cats.entry(r.gt_label.category).or_default().add(r, m);
        subs.entry(r.gt_label.subcategory).or_default().add(r, m);
        iters.entry(r.iteration).or_default().add(r, m);
    }
    let mut factors: BTreeMap<u32, Acc> = BTreeMap::new();
    for r in all {
        factors.entry(r.scale_factor).or_default().add(r, m);
    }
    let by_iteration: BTreeMap<u32, Score> = iters.iter().map(|(k, a)| (*k, a.score())).collect();
    let present: Vec<f64> = by_iteration.values().filter_map(|s| s.score).collect();
    MetricScores {
        overall: overall.score(),
        categories: cats.iter().map(|(k, a)| (*k, a.score())).collect(),
        subcategories: subs.iter().map(|(k, a)| (*k, a.score())).collect(),
        by_scale_factor: factors.iter().map(|(k, a)| (*k, a.score())).collect(),
        iteration_mean: (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64),
        by_iteration,
    }
}
