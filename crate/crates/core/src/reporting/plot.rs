//! Plot specifications for model comparison, workload versions and
//! scaling.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::metrics::Metric;
use crate::pipeline::RunReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    ModelComparison,
    WorkloadVersions,
    Scaling,
}

impl PlotKind {
    pub const ALL: [PlotKind; 3] = [PlotKind::ModelComparison, PlotKind::WorkloadVersions, PlotKind::Scaling];

    pub fn as_str(self) -> &'static str {
        match self {
            PlotKind::ModelComparison => "model_comparison",
            PlotKind::WorkloadVersions => "workload_versions",
            PlotKind::Scaling => "scaling",
        }
    }
}

impl std::str::FromStr for PlotKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown plot kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub label: String,
    pub x: Vec<String>,
    /// `None` marks a gap.
    pub y: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub kind: PlotKind,
    pub metric: Metric,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Shared x ticks, in order.
    pub x: Vec<String>,
    pub series: Vec<Series>,
    #[serde(default)]
    pub log_x: bool,
}

impl PlotSpec {
    pub fn y_max(&self) -> f64 {
        if self.metric.is_rate() {
            return 1.0;
        }
        let m = self.series.iter().flat_map(|s| s.y.iter().flatten()).fold(0.0f64, |a, &b| a.max(b));
        if m <= 0.0 {
            1.0
        } else {
            m * 1.1
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plot spec serializes") + "\n"
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlotError {
    #[error("metric {0} is not in the report")]
    MissingMetric(Metric),
    #[error("no reports to plot")]
    Empty,
}

fn y_label(metric: Metric) -> String {
    if metric.is_rate() {
        format!("{metric} score")
    } else {
        format!("mean {metric}")
    }
}

fn check(report: &RunReport, metric: Metric) -> Result<(), PlotError> {
    if report.metrics.contains(&metric) {
        Ok(())
    } else {
        Err(PlotError::MissingMetric(metric))
    }
}

/// Grouped bars: an `overall` group plus one per populated subcategory,
/// one bar per model.
pub fn plot_model_comparison(reports: &[&RunReport], metric: Metric) -> Result<PlotSpec, PlotError> {
    if reports.is_empty() {
        return Err(PlotError::Empty);
    }
    for r in reports {
        check(r, metric)?;
    }
    let subs: BTreeSet<_> = reports
        .iter()
        .flat_map(|r| r.models.iter())
        .filter_map(|m| m.metrics.get(&metric))
        .flat_map(|s| s.subcategories.keys().copied())
        .collect();
    let mut x = vec!["overall".to_string()];
    x.extend(subs.iter().map(|s| s.to_string()));
    let mut series = Vec::new();
    for r in reports {
        for m in &r.models {
            let Some(s) = m.metrics.get(&metric) else { continue };
            let mut y = vec![s.overall.score];
            y.extend(subs.iter().map(|k| s.subcategories.get(k).and_then(|v| v.score)));
            series.push(Series {
                label: m.model_id.clone(),
                x: x.clone(),
                y,
            });
        }
    }
    Ok(PlotSpec {
        kind: PlotKind::ModelComparison,
        metric,
        title: format!("{metric} by subcategory"),
        x_label: "subcategory".into(),
        y_label: y_label(metric),
        x,
        series,
        log_x: false,
    })
}

/// One line per model over workload versions; versions missing between
/// the first and last are kept as gaps.
pub fn plot_workload_versions(reports: &[(u32, &RunReport)], metric: Metric) -> Result<PlotSpec, PlotError> {
    let lo = reports.iter().map(|(v, _)| *v).min().ok_or(PlotError::Empty)?;
    let hi = reports.iter().map(|(v, _)| *v).max().ok_or(PlotError::Empty)?;
    for (_, r) in reports {
        check(r, metric)?;
    }
    let versions: Vec<u32> = (lo..=hi).collect();
    let x: Vec<String> = versions.iter().map(|v| format!("v{v}")).collect();
    let mut models: Vec<String> = Vec::new();
    for (_, r) in reports {
        for m in &r.models {
            if !models.contains(&m.model_id) {
                models.push(m.model_id.clone());
            }
        }
    }
    let series = models
        .iter()
        .map(|id| Series {
            label: id.clone(),
            x: x.clone(),
            y: versions
                .iter()
                .map(|v| {
                    reports
                        .iter()
                        .rev()
                        .find(|(rv, _)| rv == v)
                        .and_then(|(_, r)| r.scores(id, metric))
                        .and_then(|s| s.overall.score)
                })
                .collect(),
        })
        .collect();
    Ok(PlotSpec {
        kind: PlotKind::WorkloadVersions,
        metric,
        title: format!("{metric} across workload versions"),
        x_label: "workload version".into(),
        y_label: y_label(metric),
        x,
        series,
        log_x: false,
    })
}

/// One line per model over scale factors; log x when the factors span
/// two decades or more.
pub fn plot_scaling(report: &RunReport, metric: Metric) -> Result<PlotSpec, PlotError> {
    check(report, metric)?;
    let factors = &report.scale_factors;
    let x: Vec<String> = factors.iter().map(|f| f.to_string()).collect();
    let series = report
        .models
        .iter()
        .filter_map(|m| {
            let s = m.metrics.get(&metric)?;
            Some(Series {
                label: m.model_id.clone(),
                x: x.clone(),
                y: factors.iter().map(|f| s.by_scale_factor.get(f).and_then(|v| v.score)).collect(),
            })
        })
        .collect();
    let span = match (factors.first(), factors.last()) {
        (Some(&a), Some(&b)) if a > 0 => f64::from(b) / f64::from(a),
        _ => 1.0,
    };
    Ok(PlotSpec {
        kind: PlotKind::Scaling,
        metric,
        title: format!("{metric} by database scale factor"),
        x_label: "scale factor".into(),
        y_label: y_label(metric),
        x,
        series,
        log_x: span >= 100.0,
    })
}
