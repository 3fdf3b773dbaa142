//! Report export and plots.

pub mod export;
pub mod plot;
pub mod svg;

use std::path::Path;

pub use export::{csv_rows, export_report, render_report, report_csv, CsvRow, ExportFormat};
pub use plot::{plot_model_comparison, plot_scaling, plot_workload_versions, PlotError, PlotKind, PlotSpec, Series};
pub use svg::render_svg;

/// Writes `<kind>_<metric>.svg` and `.json` into `dir`.
pub fn write_plot(spec: &PlotSpec, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let stem = format!("{}_{}", spec.kind.as_str(), spec.metric);
    std::fs::write(dir.join(format!("{stem}.json")), spec.to_json())?;
    std::fs::write(dir.join(format!("{stem}.svg")), render_svg(spec))
}

/// Model-comparison and scaling plots for every metric of one run.
pub fn write_run_plots(report: &crate::pipeline::RunReport, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for &m in &report.metrics {
        if let Ok(spec) = plot_model_comparison(&[report], m) {
            write_plot(&spec, dir)?;
        }
        if let Ok(spec) = plot_scaling(report, m) {
            write_plot(&spec, dir)?;
        }
    }
    Ok(())
}
