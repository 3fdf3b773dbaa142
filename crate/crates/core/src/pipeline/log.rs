//! Append-only structured run log with cursor reads and long-polling.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Info,
    Warn,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    /// 1-based, contiguous.
    pub seq: u64,
    pub ts: String,
    pub level: Level,
    pub stage: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub done: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total: Option<u64>,
}

#[derive(Default)]
struct Inner {
    events: Vec<LogEvent>,
    closed: bool,
    done: u64,
    total: u64,
}

#[derive(Default)]
pub struct RunLog {
    inner: Mutex<Inner>,
    cv: Condvar,
}

impl RunLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, level: Level, stage: &str, message: String, progress: bool) -> u64 {
        let mut g = self.inner.lock().expect("log lock");
        let seq = g.events.len() as u64 + 1;
        let (done, total) = if progress { (Some(g.done), Some(g.total)) } else { (None, None) };
        match level {
            Level::Info => tracing::info!(stage, "{message}"),
            Level::Warn => tracing::warn!(stage, "{message}"),
            Level::Error => tracing::error!(stage, "{message}"),
        }
        g.events.push(LogEvent {
            seq,
            ts: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            level,
            stage: stage.to_string(),
            message,
            done,
            total,
        });
        self.cv.notify_all();
        seq
    }

    pub fn info(&self, stage: &str, message: impl Into<String>) -> u64 {
        self.push(Level::Info, stage, message.into(), false)
    }

    pub fn warn(&self, stage: &str, message: impl Into<String>) -> u64 {
        self.push(Level::Warn, stage, message.into(), false)
    }

    pub fn error(&self, stage: &str, message: impl Into<String>) -> u64 {
        self.push(Level::Error, stage, message.into(), false)
    }

    pub fn add_total(&self, n: u64) {
        self.inner.lock().expect("log lock").total += n;
    }

    /// Counts one finished task; every `every`-th task and the last one
    /// are logged.
    pub fn tick(&self, stage: &str, every: u64) {
        let (done, total) = {
            let mut g = self.inner.lock().expect("log lock");
            g.done += 1;
            (g.done, g.total)
        };
        if done == total || (every > 0 && done % every == 0) {
            self.push(Level::Info, stage, format!("{done}/{total} tasks done"), true);
        }
    }

    pub fn progress(&self) -> (u64, u64) {
        let g = self.inner.lock().expect("log lock");
        (g.done, g.total)
    }

    /// No further events will be appended; wakes pollers.
    pub fn close(&self) {
        self.inner.lock().expect("log lock").closed = true;
        self.cv.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.inner.lock().expect("log lock").closed
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("log lock").events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<LogEvent> {
        self.inner.lock().expect("log lock").events.clone()
    }

    /// Events with `seq > after`, waiting up to `wait` for the first one
    /// unless the log is closed.
    pub fn after(&self, after: u64, wait: Duration) -> Vec<LogEvent> {
        let deadline = Instant::now() + wait;
        let mut g = self.inner.lock().expect("log lock");
        loop {
            if (g.events.len() as u64) > after || g.closed {
                return g.events.iter().skip(after as usize).cloned().collect();
            }
            let now = Instant::now();
            if now >= deadline {
                return Vec::new();
            }
            g = self.cv.wait_timeout(g, deadline - now).expect("log lock").0;
        }
    }

    pub fn to_ndjson(&self) -> String {
        events_to_ndjson(&self.snapshot())
    }
}

pub fn events_to_ndjson(events: &[LogEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("event serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_ndjson(text: &str) -> Result<Vec<LogEvent>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn cursor_batches_are_contiguous() {
        let log = RunLog::new();
        log.info("a", "one");
        log.info("a", "two");
        let first = log.after(0, Duration::ZERO);
        log.warn("b", "three");
        let second = log.after(first.last().unwrap().seq, Duration::ZERO);
        let seqs: Vec<u64> = first.iter().chain(&second).map(|e| e.seq).collect();
        assert_eq!(seqs, vec![1, 2, 3]);
        let mut joined = events_to_ndjson(&first);
        joined.push_str(&events_to_ndjson(&second));
        assert_eq!(joined, log.to_ndjson());
        assert_eq!(parse_ndjson(&joined).unwrap(), log.snapshot());
    }

    #[test]
    fn long_poll_wakes_on_append() {
        let log = Arc::new(RunLog::new());
        let l2 = log.clone();
        let h = std::thread::spawn(move || l2.after(0, Duration::from_secs(10)));
        std::thread::sleep(Duration::from_millis(50));
        log.info("s", "hello");
        let got = h.join().unwrap();
        assert_eq!(got.len(), 1);
        assert!(log.after(1, Duration::from_millis(20)).is_empty());
        log.close();
        assert!(log.after(1, Duration::from_secs(10)).is_empty());
    }
}
