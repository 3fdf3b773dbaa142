//! Run directories: `runs/<run_id>/{config.json, records.jsonl,
//! report.json, logs.ndjson, timings.jsonl, timing.json, plots/}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::aggregate::RunReport;
use super::config::{valid_id, RunConfig};
use super::log::{events_to_ndjson, parse_ndjson, LogEvent};
use super::record::{DataPointRecord, TimingRow};

#[derive(Debug, thiserror::Error)]
pub enum RunStoreError {
    #[error("run `{0}` not found")]
    NotFound(String),
    #[error("run `{0}` already exists")]
    Exists(String),
    #[error("run storage: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt run file {0}: {1}")]
    Format(PathBuf, String),
}

/// Wall-clock figures; volatile, so kept apart from report.json.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WallClock {
    pub started_at: String,
    pub finished_at: String,
    pub total_ms: f64,
    pub stage_ms: BTreeMap<String, f64>,
    pub gateway_calls: u64,
    pub gt_executions: u64,
    pub cancelled: bool,
}

pub fn runs_dir(workdir: &Path) -> PathBuf {
    workdir.join("runs")
}

pub fn run_dir(workdir: &Path, run_id: &str) -> PathBuf {
    runs_dir(workdir).join(run_id)
}

pub fn records_to_jsonl(records: &[DataPointRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub struct RunArtifacts<'a> {
    pub run_id: &'a str,
    pub config: &'a RunConfig,
    pub records: &'a [DataPointRecord],
    pub report: &'a RunReport,
    pub logs: &'a [LogEvent],
    pub timings: &'a [TimingRow],
    pub wall: &'a WallClock,
}

/// Writes everything to a scratch directory, then renames it into place.
pub fn persist_run(workdir: &Path, a: &RunArtifacts<'_>) -> Result<PathBuf, RunStoreError> {
    let dest = run_dir(workdir, a.run_id);
    if dest.exists() {
        return Err(RunStoreError::Exists(a.run_id.to_string()));
    }
    let runs = runs_dir(workdir);
    fs::create_dir_all(&runs)?;
    let tmp = runs.join(format!(".tmp-{}-{}", a.run_id, std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    let mut config = a.config.clone();
    config.run_id = Some(a.run_id.to_string());
    fs::write(tmp.join("config.json"), serde_json::to_string_pretty(&config).expect("config serializes") + "\n")?;
    fs::write(tmp.join("records.jsonl"), records_to_jsonl(a.records))?;
    fs::write(tmp.join("report.json"), a.report.to_json())?;
    fs::write(tmp.join("logs.ndjson"), events_to_ndjson(a.logs))?;
    let mut timings = String::new();
    for t in a.timings {
        timings.push_str(&serde_json::to_string(t).expect("timing serializes"));
        timings.push('\n');
    }
    fs::write(tmp.join("timings.jsonl"), timings)?;
    fs::write(tmp.join("timing.json"), serde_json::to_string_pretty(a.wall).expect("wall clock serializes") + "\n")?;
    crate::reporting::write_run_plots(a.report, &tmp.join("plots"))?;
    fs::rename(&tmp, &dest)?;
    Ok(dest)
}

#[derive(Debug, Clone)]
pub struct StoredRun {
    pub run_id: String,
    pub dir: PathBuf,
    pub config: RunConfig,
    pub records: Vec<DataPointRecord>,
    pub report: RunReport,
    /// report.json exactly as stored.
    pub report_text: String,
    pub logs: Vec<LogEvent>,
    pub wall: Option<WallClock>,
}

fn read(path: &Path) -> Result<String, RunStoreError> {
    fs::read_to_string(path).map_err(RunStoreError::Io)
}

fn corrupt(path: &Path, e: impl std::fmt::Display) -> RunStoreError {
    RunStoreError::Format(path.to_path_buf(), e.to_string())
}

pub fn load_records(path: &Path) -> Result<Vec<DataPointRecord>, RunStoreError> {
    read(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| corrupt(path, e)))
        .collect()
}

pub fn load_run(workdir: &Path, run_id: &str) -> Result<StoredRun, RunStoreError> {
    let dir = run_dir(workdir, run_id);
    if !valid_id(run_id) || !dir.join("report.json").is_file() {
        return Err(RunStoreError::NotFound(run_id.to_string()));
    }
    let config_path = dir.join("config.json");
    let config = serde_json::from_str(&read(&config_path)?).map_err(|e| corrupt(&config_path, e))?;
    let records = load_records(&dir.join("records.jsonl"))?;
    let report_path = dir.join("report.json");
    let report_text = read(&report_path)?;
    let report = serde_json::from_str(&report_text).map_err(|e| corrupt(&report_path, e))?;
    let logs_path = dir.join("logs.ndjson");
    let logs = parse_ndjson(&read(&logs_path)?).map_err(|e| corrupt(&logs_path, e))?;
    let wall = fs::read_to_string(dir.join("timing.json")).ok().and_then(|t| serde_json::from_str(&t).ok());
    Ok(StoredRun {
        wall,
        run_id: run_id.to_string(),
        dir,
        config,
        records,
        report,
        report_text,
        logs,
    })
}

/// Ids of persisted runs, sorted.
pub fn list_runs(workdir: &Path) -> Result<Vec<String>, RunStoreError> {
    let dir = runs_dir(workdir);
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for e in fs::read_dir(dir)? {
        let e = e?;
        let name = e.file_name().to_string_lossy().into_owned();
        if !name.starts_with('.') && e.path().join("report.json").is_file() {
            out.push(name);
        }
    }
    out.sort();
    Ok(out)
}

/// The latest persisted run of each version of a stored workload.
pub fn runs_by_workload_version(workdir: &Path, workload_id: &str) -> Result<Vec<(u32, StoredRun)>, RunStoreError> {
    let mut best: BTreeMap<u32, StoredRun> = BTreeMap::new();
    for id in list_runs(workdir)? {
        let run = load_run(workdir, &id)?;
        if run.config.workload.id.as_deref() != Some(workload_id) {
            continue;
        }
        let Some(v) = run.config.workload.version else { continue };
        let finished = |r: &StoredRun| r.wall.as_ref().map(|w| w.finished_at.clone()).unwrap_or_default();
        match best.get(&v) {
            Some(prev) if (finished(prev), prev.run_id.as_str()) >= (finished(&run), run.run_id.as_str()) => {}
            _ => {
                best.insert(v, run);
            }
        }
    }
    Ok(best.into_iter().collect())
}
