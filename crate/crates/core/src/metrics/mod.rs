//! The five per-query metrics: execution accuracy, exact match, complexity
//! consistency, execution time consistency and token usage.

pub mod compare;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::datastore::{ExecError, ResultTable, TimingStats};
use crate::gateway::GenerationRecord;
use crate::sql::{exact_match, MatchMode, QueryAst, SchemaMap, TaxonomyLabel};

pub use compare::{cells_equal, compare_result_tables, find_column_map, ComparisonPolicy};

pub const DEFAULT_TAU: f64 = 1.0;
pub const DEFAULT_FLOOR_MS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(alias = "ea")]
    EA,
    #[serde(alias = "em")]
    EM,
    #[serde(alias = "cc")]
    CC,
    #[serde(alias = "etc")]
    ETC,
    #[serde(alias = "tu")]
    TU,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::EA, Metric::EM, Metric::CC, Metric::ETC, Metric::TU];

    /// Boolean metrics are rates in [0, 1]; TU is a mean count.
    pub fn is_rate(self) -> bool {
        self != Metric::TU
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown metric `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricValue {
    Bool(bool),
    Count(u64),
}

impl MetricValue {
    /// Contribution to an aggregate: 1/0 for booleans, the count otherwise.
    pub fn as_f64(self) -> f64 {
        match self {
            MetricValue::Bool(b) => f64::from(u8::from(b)),
            MetricValue::Count(n) => n as f64,
        }
    }
}

/// One metric for one (generated, ground-truth) pair. `value` is absent
/// when a prerequisite failed upstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricOutcome {
    pub metric: Metric,
    pub value: Option<MetricValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}

impl MetricOutcome {
    pub fn new(metric: Metric, value: Option<MetricValue>, detail: Option<serde_json::Value>) -> Self {
        MetricOutcome { metric, value, detail }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self.value {
            Some(MetricValue::Bool(b)) => Some(b),
            _ => None,
        }
    }
}

pub fn execution_accuracy(
    gen: Result<&ResultTable, &ExecError>,
    gt: &ResultTable,
    policy: &ComparisonPolicy,
) -> MetricOutcome {
    match gen {
        Err(e) => MetricOutcome::new(
            Metric::EA,
            Some(MetricValue::Bool(false)),
            Some(json!({"reason": "execution failed", "error": e.to_string()})),
        ),
        Ok(t) => {
            let ok = compare_result_tables(t, gt, policy);
            let detail = (!ok).then(|| {
                if t.columns.len() != gt.columns.len() {
                    json!({"reason": "column count differs", "generated": t.columns.len(), "ground_truth": gt.columns.len()})
                } else if t.rows.len() != gt.rows.len() {
                    json!({"reason": "row count differs", "generated": t.rows.len(), "ground_truth": gt.rows.len()})
                } else {
                    json!({"reason": "results differ"})
                }
            });
            MetricOutcome::new(Metric::EA, Some(MetricValue::Bool(ok)), detail)
        }
    }
}

/// Exact match; an unparsable generated query scores false.
pub fn exact_match_metric(
    gen: Option<&QueryAst>,
    gt: &QueryAst,
    mode: MatchMode,
    schema: Option<&SchemaMap>,
) -> MetricOutcome {
    match gen {
        None => MetricOutcome::new(
            Metric::EM,
            Some(MetricValue::Bool(false)),
            Some(json!({"reason": "generated query does not parse"})),
        ),
        Some(g) => {
            let (ok, diff) = exact_match(g, gt, mode, schema);
            let detail = (!ok).then(|| serde_json::to_value(&diff).expect("diff serializes"));
            MetricOutcome::new(Metric::EM, Some(MetricValue::Bool(ok)), detail)
        }
    }
}

/// True iff the generated query's category does not exceed the ground
/// truth's; subcategories are ignored.
pub fn complexity_consistency(gen_label: Option<TaxonomyLabel>, gt_label: TaxonomyLabel) -> MetricOutcome {
    match gen_label {
        None => MetricOutcome::new(
            Metric::CC,
            Some(MetricValue::Bool(false)),
            Some(json!({"reason": "generated query does not parse"})),
        ),
        Some(g) => {
            let ok = g.category <= gt_label.category;
            let detail = (!ok).then(|| {
                json!({"generated": g.category.to_string(), "ground_truth": gt_label.category.to_string()})
            });
            MetricOutcome::new(Metric::CC, Some(MetricValue::Bool(ok)), detail)
        }
    }
}

/// True iff the generated query finished and its median time is within
/// `(1 + tau) * max(gt median, floor_ms)`.
pub fn execution_time_consistency(gen_t: &TimingStats, gt_t: &TimingStats, tau: f64, floor_ms: f64) -> MetricOutcome {
    if gen_t.timeout {
        return MetricOutcome::new(
            Metric::ETC,
            Some(MetricValue::Bool(false)),
            Some(json!({"reason": "generated query timed out"})),
        );
    }
    let bound = (1.0 + tau) * gt_t.median_ms.max(floor_ms);
    MetricOutcome::new(Metric::ETC, Some(MetricValue::Bool(gen_t.median_ms <= bound)), None)
}

/// Provider-reported token counts, else `ceil(chars / 4)` marked
/// approximate.
pub fn token_usage(rec: &GenerationRecord) -> MetricOutcome {
    match (rec.input_tokens, rec.output_tokens) {
        (Some(i), o) => MetricOutcome::new(Metric::TU, Some(MetricValue::Count(i + o.unwrap_or(0))), None),
        (None, Some(o)) => MetricOutcome::new(Metric::TU, Some(MetricValue::Count(o)), None),
        (None, None) => {
            let chars = rec.prompt_chars + rec.output_chars;
            MetricOutcome::new(
                Metric::TU,
                Some(MetricValue::Count(chars.div_ceil(4))),
                Some(json!({"approximate": true})),
            )
        }
    }
}

/// A metric whose prerequisites failed upstream.
pub fn absent(metric: Metric, reason: &str) -> MetricOutcome {
    MetricOutcome::new(metric, None, Some(json!({ "reason": reason })))
}
