//! Run registry and the single background worker that executes queued
//! runs in FIFO order.

use std::collections::{BTreeMap, VecDeque};
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use sqleval_core::pipeline::{run_evaluation, RunConfig, RunContext, RunLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunState {
    Queued,
    Running,
    Completed,
    Failed,
}

impl RunState {
    pub fn is_finished(self) -> bool {
        matches!(self, RunState::Completed | RunState::Failed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub completed: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub run_id: String,
    pub state: RunState,
    pub progress: Progress,
    pub started_at: Option<String>,
    pub finished_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct RunEntry {
    pub status: RunStatus,
    pub log: Arc<RunLog>,
    config: RunConfig,
}

#[derive(Default)]
struct Inner {
    runs: BTreeMap<String, RunEntry>,
    queue: VecDeque<String>,
    shutdown: bool,
}

pub struct Registry {
    pub workdir: PathBuf,
    inner: Mutex<Inner>,
    cv: Condvar,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl Registry {
    /// Creates the registry and starts its worker thread.
    pub fn start(workdir: PathBuf) -> Arc<Registry> {
        let reg = Arc::new(Registry {
            workdir,
            inner: Mutex::new(Inner::default()),
            cv: Condvar::new(),
        });
        let worker = reg.clone();
        std::thread::Builder::new()
            .name("run-worker".into())
            .spawn(move || worker.work())
            .expect("spawn run worker");
        reg
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn contains(&self, run_id: &str) -> bool {
        self.lock().runs.contains_key(run_id)
    }

    /// Queues a run whose id is already resolved and unused.
    pub fn enqueue(&self, run_id: String, config: RunConfig) {
        let mut g = self.lock();
        g.runs.insert(
            run_id.clone(),
            RunEntry {
                status: RunStatus {
                    run_id: run_id.clone(),
                    state: RunState::Queued,
                    progress: Progress { completed: 0, total: 0 },
                    started_at: None,
                    finished_at: None,
                    error: None,
                },
                log: Arc::new(RunLog::new()),
                config,
            },
        );
        g.queue.push_back(run_id);
        self.cv.notify_all();
    }

    pub fn status(&self, run_id: &str) -> Option<RunStatus> {
        let g = self.lock();
        let e = g.runs.get(run_id)?;
        let mut s = e.status.clone();
        let (done, total) = e.log.progress();
        s.progress = Progress { completed: done, total };
        Some(s)
    }

    pub fn statuses(&self) -> Vec<RunStatus> {
        let ids: Vec<String> = self.lock().runs.keys().cloned().collect();
        ids.iter().filter_map(|id| self.status(id)).collect()
    }

    pub fn log(&self, run_id: &str) -> Option<Arc<RunLog>> {
        self.lock().runs.get(run_id).map(|e| e.log.clone())
    }

    pub fn shutdown(&self) {
        self.lock().shutdown = true;
        self.cv.notify_all();
    }

    fn work(&self) {
        loop {
            let (run_id, config, log) = {
                let mut g = self.lock();
                loop {
                    if g.shutdown {
                        return;
                    }
                    if let Some(id) = g.queue.pop_front() {
                        let e = g.runs.get_mut(&id).expect("queued run is registered");
                        e.status.state = RunState::Running;
                        e.status.started_at = Some(now());
                        break (id, e.config.clone(), e.log.clone());
                    }
                    g = self.cv.wait(g).unwrap_or_else(|e| e.into_inner());
                }
            };
            let mut ctx = RunContext::new(self.workdir.clone());
            ctx.log = log;
            let mut cfg = config;
            cfg.run_id = Some(run_id.clone());
            let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run_evaluation(&cfg, &ctx)));
            let mut g = self.lock();
            let e = g.runs.get_mut(&run_id).expect("running run is registered");
            e.status.finished_at = Some(now());
            match result {
                Ok(Ok(_)) => e.status.state = RunState::Completed,
                Ok(Err(err)) => {
                    e.status.state = RunState::Failed;
                    e.status.error = Some(err.to_string());
                }
                Err(_) => {
                    e.status.state = RunState::Failed;
                    e.status.error = Some("run crashed".into());
                    e.log.close();
                }
            }
        }
    }
}
