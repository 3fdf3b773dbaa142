//! Evaluation runs: configuration, orchestration, aggregation and storage.

pub mod aggregate;
pub mod augment;
pub mod config;
pub mod log;
pub mod persist;
pub mod record;
pub mod run;

pub use augment::{augment_from_run, AugmentJob, AugmentJobError, AugmentSummary};
pub use aggregate::{aggregate, ErrorAnalysisEntry, MetricScores, ModelReport, RunReport, Score};
pub use config::{ConfigError, RunConfig, WorkloadRef};
pub use log::{LogEvent, RunLog};
pub use persist::{list_runs, load_run, persist_run, records_to_jsonl, runs_by_workload_version, RunStoreError, StoredRun, WallClock};
pub use record::{evaluate_datapoint, DataPointRecord, EvalSettings, GtExecution, TimingRow};
pub use run::{catalog_path, load_workload_ref, run_evaluation, RunContext, RunError, RunOutcome};
