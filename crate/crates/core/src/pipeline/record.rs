//! Per-data-point evaluation.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::datastore::{execute_query, measure_time, DatabaseRef, ExecError, ResultTable, TimingStats};
use crate::gateway::GenerationRecord;
use crate::metrics::{
    absent, complexity_consistency, execution_accuracy, execution_time_consistency, exact_match_metric, token_usage,
    ComparisonPolicy, Metric, MetricOutcome, MetricValue,
};
use crate::repair::{suggest_repairs, RepairSuggestion};
use crate::sql::{classify, parse_sql, MatchMode, TaxonomyLabel};
use crate::workload::DataPoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPointRecord {
    pub dp_id: String,
    pub model_id: String,
    pub iteration: u32,
    pub scale_factor: u32,
    pub db_id: String,
    pub question: String,
    pub gt_sql: String,
    pub gt_label: TaxonomyLabel,
    /// Volatile fields (`latency_ms`, `cached`) are zeroed; see timings.
    pub generation: GenerationRecord,
    /// `None` when the generated query does not parse.
    pub gen_label: Option<TaxonomyLabel>,
    pub outcomes: Vec<MetricOutcome>,
    pub repairs: Vec<RepairSuggestion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen_exec_error: Option<String>,
    /// Set when evaluation itself crashed; outcomes are then failures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crash: Option<String>,
}

impl DataPointRecord {
    pub fn outcome(&self, m: Metric) -> Option<&MetricOutcome> {
        self.outcomes.iter().find(|o| o.metric == m)
    }
}

/// Run-local measurements kept out of the deterministic records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub dp_id: String,
    pub model_id: String,
    pub iteration: u32,
    pub scale_factor: u32,
    pub latency_ms: f64,
    pub cached: bool,
    pub gt_median_ms: Option<f64>,
    pub gen_median_ms: Option<f64>,
}

/// Ground-truth result and timing for one (data point, scale factor).
#[derive(Debug, Clone)]
pub struct GtExecution {
    pub result: Result<ResultTable, ExecError>,
    pub timing: Option<Result<TimingStats, ExecError>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub metrics: Vec<Metric>,
    pub policy: ComparisonPolicy,
    pub em_mode: MatchMode,
    pub tau: f64,
    pub floor_ms: f64,
    pub timeout_ms: u64,
    pub row_cap: usize,
    pub repetitions: usize,
    pub repair_depth: usize,
}

impl EvalSettings {
    pub fn from_config(cfg: &RunConfig) -> Self {
        EvalSettings {
            metrics: cfg.metrics.clone(),
            policy: cfg.policy.clone(),
            em_mode: cfg.em_mode,
            tau: cfg.tau,
            floor_ms: cfg.floor_ms,
            timeout_ms: cfg.timeout_ms,
            row_cap: cfg.row_cap,
            repetitions: cfg.repetitions,
            repair_depth: cfg.repair_depth,
        }
    }

    fn wants(&self, m: Metric) -> bool {
        self.metrics.contains(&m)
    }
}

/// Executes the ground truth once, timing it when ETC is selected.
/// Timing runs hold `timing_lock` so measurements never overlap.
pub fn execute_ground_truth(dp: &DataPoint, db: &DatabaseRef, s: &EvalSettings, timing_lock: &Mutex<()>) -> GtExecution {
    let result = execute_query(db, &dp.gt_sql, s.timeout_ms, s.row_cap);
    let timing = (s.wants(Metric::ETC) && result.is_ok()).then(|| {
        let _g = timing_lock.lock().unwrap_or_else(|e| e.into_inner());
        measure_time(db, &dp.gt_sql, s.repetitions, s.timeout_ms)
    });
    GtExecution { result, timing }
}

fn stable(gen: &GenerationRecord) -> GenerationRecord {
    GenerationRecord {
        latency_ms: 0.0,
        cached: false,
        ..gen.clone()
    }
}

/// Scores one generated query against its ground truth on `db`. Never
/// fails: every problem becomes a recorded outcome.
pub fn evaluate_datapoint(
    dp: &DataPoint,
    gen: &GenerationRecord,
    db: &DatabaseRef,
    scale_factor: u32,
    gt: &GtExecution,
    s: &EvalSettings,
    timing_lock: &Mutex<()>,
) -> (DataPointRecord, TimingRow) {
    let gt_ast = dp.parse().ok();
    let gt_label = dp.label();
    let generated = gen.error.is_none();
    let gen_ast = generated.then(|| parse_sql(&gen.sql_text, db.engine.dialect()).ok()).flatten();
    let gen_label = gen_ast.as_ref().map(classify);
    let needs_exec = generated && (s.wants(Metric::EA) || s.wants(Metric::ETC));
    let gen_result = needs_exec.then(|| execute_query(db, &gen.sql_text, s.timeout_ms, s.row_cap));
    let gen_exec_error = match &gen_result {
        Some(Err(e)) => Some(e.to_string()),
        _ => None,
    };
    let mut timing = TimingRow {
        dp_id: dp.id.clone(),
        model_id: gen.model_id.clone(),
        iteration: gen.iteration,
        scale_factor,
        latency_ms: gen.latency_ms,
        cached: gen.cached,
        gt_median_ms: gt.timing.as_ref().and_then(|t| t.as_ref().ok()).map(|t| t.median_ms),
        gen_median_ms: None,
    };
    let gen_failed = |m: Metric, why: &str| {
        MetricOutcome::new(m, Some(MetricValue::Bool(false)), Some(serde_json::json!({ "reason": why })))
    };

    let mut outcomes = Vec::new();
    for &m in &s.metrics {
        let o = match m {
            Metric::EA => match (&gen_result, &gt.result) {
                (_, Err(_)) => absent(m, "ground truth failed"),
                (None, _) => gen_failed(m, "generation failed"),
                (Some(r), Ok(t)) => execution_accuracy(r.as_ref(), t, &s.policy),
            },
            Metric::EM => match &gt_ast {
                None => absent(m, "ground truth does not parse"),
                Some(g) => exact_match_metric(gen_ast.as_ref(), g, s.em_mode, Some(&db.schema.column_map())),
            },
            Metric::CC => complexity_consistency(gen_label, gt_label),
            Metric::ETC => match (&gen_result, &gt.timing) {
                (_, None) | (_, Some(Err(_))) => absent(m, "ground truth failed"),
                (_, Some(Ok(t))) if t.timeout => absent(m, "ground truth timed out"),
                (None, _) => gen_failed(m, "generation failed"),
                (Some(Err(_)), _) => gen_failed(m, "execution failed"),
                (Some(Ok(_)), Some(Ok(gt_t))) => {
                    let gen_t = if gen.sql_text.trim() == dp.gt_sql.trim() {
                        Ok(gt_t.clone())
                    } else {
                        let _g = timing_lock.lock().unwrap_or_else(|e| e.into_inner());
                        measure_time(db, &gen.sql_text, s.repetitions, s.timeout_ms)
                    };
                    match gen_t {
                        Ok(t) => {
                            timing.gen_median_ms = Some(t.median_ms);
                            execution_time_consistency(&t, gt_t, s.tau, s.floor_ms)
                        }
                        Err(_) => gen_failed(m, "execution failed"),
                    }
                }
            },
            Metric::TU => token_usage(gen),
        };
        outcomes.push(o);
    }

    let ea_false = outcomes.iter().any(|o| o.metric == Metric::EA && o.as_bool() == Some(false));
    let repairs = match (&gen_result, &gt.result) {
        (Some(Ok(g)), Ok(t)) if ea_false => suggest_repairs(&dp.id, &gen.model_id, g, t, s.repair_depth, &s.policy),
        _ => Vec::new(),
    };
    let record = DataPointRecord {
        dp_id: dp.id.clone(),
        model_id: gen.model_id.clone(),
        iteration: gen.iteration,
        scale_factor,
        db_id: dp.db_id.clone(),
        question: dp.question.clone(),
        gt_sql: dp.gt_sql.clone(),
        gt_label,
        generation: stable(gen),
        gen_label,
        outcomes,
        repairs,
        gen_exec_error,
        crash: None,
    };
    (record, timing)
}

/// Record for a data point whose evaluation panicked: boolean metrics
/// score false, TU is still reported.
pub fn crash_record(dp: &DataPoint, gen: &GenerationRecord, scale_factor: u32, s: &EvalSettings, msg: &str) -> DataPointRecord {
    let outcomes = s
        .metrics
        .iter()
        .map(|&m| match m {
            Metric::TU => token_usage(gen),
            _ => MetricOutcome::new(
                m,
                Some(MetricValue::Bool(false)),
                Some(serde_json::json!({ "reason": "evaluation crashed" })),
            ),
        })
        .collect();
    DataPointRecord {
        dp_id: dp.id.clone(),
        model_id: gen.model_id.clone(),
        iteration: gen.iteration,
        scale_factor,
        db_id: dp.db_id.clone(),
        question: dp.question.clone(),
        gt_sql: dp.gt_sql.clone(),
        gt_label: dp.label.unwrap_or_else(|| "1.1".to_string().try_into().expect("valid label")),
        generation: stable(gen),
        gen_label: None,
        outcomes,
        repairs: Vec::new(),
        gen_exec_error: None,
        crash: Some(msg.to_string()),
    }
}
