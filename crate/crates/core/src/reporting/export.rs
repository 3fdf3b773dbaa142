//! Report export as JSON or flat CSV.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::pipeline::{RunReport, Score};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ExportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ExportFormat::Json),
            "csv" => Ok(ExportFormat::Csv),
            _ => Err(format!("unknown format `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub model_id: String,
    pub metric: String,
    pub level: String,
    pub group: String,
    pub score: Option<f64>,
    pub support: usize,
}

/// One row per (model, metric, level, group): the overall score, every
/// populated category and every populated subcategory.
pub fn csv_rows(report: &RunReport) -> Vec<CsvRow> {
    let mut rows = Vec::new();
    for m in &report.models {
        for (metric, s) in &m.metrics {
            let mut push = |level: &str, group: String, sc: &Score| {
                rows.push(CsvRow {
                    model_id: m.model_id.clone(),
                    metric: metric.to_string(),
                    level: level.to_string(),
                    group,
                    score: sc.score,
                    support: sc.support,
                })
            };
            push("overall", "overall".into(), &s.overall);
            for (c, sc) in &s.categories {
                push("category", c.to_string(), sc);
            }
            for (sub, sc) in &s.subcategories {
                push("subcategory", sub.to_string(), sc);
            }
        }
    }
    rows
}

pub fn report_csv(report: &RunReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in csv_rows(report) {
        w.serialize(r).expect("csv row serializes");
    }
    String::from_utf8(w.into_inner().expect("csv flushes")).expect("csv is utf-8")
}

pub fn render_report(report: &RunReport, format: ExportFormat) -> String {
    match format {
        ExportFormat::Json => report.to_json(),
        ExportFormat::Csv => report_csv(report),
    }
}

/// Writes `report.<ext>` into `dir`.
pub fn export_report(report: &RunReport, format: ExportFormat, dir: &Path) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(match format {
        ExportFormat::Json => "report.json",
        ExportFormat::Csv => "report.csv",
    });
    std::fs::write(&path, render_report(report, format))?;
    Ok(path)
}
