use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use reqwest::StatusCode;
use serde_json::{json, Value};
use sqleval_core::pipeline::log::parse_ndjson;
use sqleval_server::{app, AppState};

/// A text-to-SQL service that holds every reply until `open` is called.
struct GatedService {
    url: String,
    gate: Arc<(Mutex<bool>, Condvar)>,
}

impl GatedService {
    fn start() -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/generate", listener.local_addr().unwrap());
        let gate = Arc::new((Mutex::new(false), Condvar::new()));
        let g = gate.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let g = g.clone();
                std::thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut len = 0usize;
                    loop {
                        let mut line = String::new();
                        if reader.read_line(&mut line).unwrap_or(0) == 0 {
                            return;
                        }
                        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                            len = v.trim().parse().unwrap();
                        }
                        if line == "\r\n" {
                            break;
                        }
                    }
                    let mut body = vec![0; len];
                    reader.read_exact(&mut body).unwrap();
                    let (lock, cv) = &*g;
                    let _open = cv.wait_while(lock.lock().unwrap(), |open| !*open).unwrap();
                    let reply = r#"{"sql": "SELECT 1"}"#;
                    let mut s = stream;
                    let _ = write!(
                        s,
                        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                        reply.len()
                    );
                });
            }
        });
        GatedService { url, gate }
    }

    fn open(&self) {
        *self.gate.0.lock().unwrap() = true;
        self.gate.1.notify_all();
    }
}

struct Api {
    base: String,
    http: reqwest::Client,
    _dir: tempfile::TempDir,
    workdir: std::path::PathBuf,
}

impl Api {
    async fn start() -> Self {
        let dir = tempfile::tempdir().unwrap();
        sqleval_core::bundled::install(dir.path()).unwrap();
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let router = app(AppState::new(dir.path()), None);
        tokio::spawn(async move { axum::serve(listener, router).await.unwrap() });
        Api {
            base,
            http: reqwest::Client::new(),
            workdir: dir.path().to_path_buf(),
            _dir: dir,
        }
    }

    async fn get(&self, path: &str) -> (StatusCode, String) {
        let r = self.http.get(format!("{}{path}", self.base)).send().await.unwrap();
        (r.status(), r.text().await.unwrap())
    }

    async fn get_json(&self, path: &str) -> (StatusCode, Value) {
        let (s, t) = self.get(path).await;
        (s, serde_json::from_str(&t).unwrap_or(Value::Null))
    }

    async fn post(&self, path: &str, body: &Value) -> (StatusCode, Value) {
        let r = self
            .http
            .post(format!("{}{path}", self.base))
            .json(body)
            .send()
            .await
            .unwrap();
        (r.status(), r.json().await.unwrap_or(Value::Null))
    }

    async fn state(&self, run: &str) -> String {
        let (s, v) = self.get_json(&format!("/runs/{run}/status")).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        v["state"].as_str().unwrap().to_string()
    }

    async fn wait_for(&self, run: &str, state: &str) -> Value {
        let deadline = Instant::now() + Duration::from_secs(60);
        loop {
            let (_, v) = self.get_json(&format!("/runs/{run}/status")).await;
            if v["state"] == state {
                return v;
            }
            assert!(v["state"] != "failed", "{v}");
            assert!(Instant::now() < deadline, "timed out waiting for {run} to be {state}: {v}");
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }
}

fn oracle_config(run_id: &str, workload: &str) -> Value {
    json!({
        "run_id": run_id,
        "workload": {"id": workload},
        "models": [
            {"model_id": "oracle", "kind": "mock_oracle"},
            {"model_id": "noorder", "kind": "mock_mutant", "settings": {"mutation": "drop_order_by"}}
        ]
    })
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn runs_queue_fifo_and_stream_logs() {
    let api = Api::start().await;
    let service = GatedService::start();
    let slow = json!({
        "run_id": "slow",
        "workload": {"id": "demo_easy"},
        "models": [{"model_id": "svc", "kind": "external_http", "settings": {"endpoint": service.url}}],
        "cache": false
    });
    let (s, v) = api.post("/runs", &slow).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{v}");
    assert_eq!(v["run_id"], "slow");
    let (s, _) = api.post("/runs", &oracle_config("fast", "demo_hard")).await;
    assert_eq!(s, StatusCode::ACCEPTED);

    api.wait_for("slow", "running").await;
    assert_eq!(api.state("fast").await, "queued");

    // nothing about an unfinished run is final yet
    assert_eq!(api.get("/runs/slow/report").await.0, StatusCode::CONFLICT);
    assert_eq!(api.post("/runs", &slow).await.0, StatusCode::CONFLICT);
    let aug = json!({"run_id": "slow", "threshold": 0.5, "per_subcat": 1});
    assert_eq!(api.post("/workloads/demo_easy/augment", &aug).await.0, StatusCode::CONFLICT);

    // drain the log with a cursor while the run progresses
    let mut events = Vec::new();
    let mut cursor = 0;
    let mut opened = false;
    loop {
        let (s, text) = api.get(&format!("/runs/slow/logs?after={cursor}&wait_ms=200")).await;
        assert_eq!(s, StatusCode::OK);
        let batch = parse_ndjson(&text).unwrap();
        for e in &batch {
            assert_eq!(e.seq, cursor + 1, "batches must be contiguous");
            cursor = e.seq;
        }
        events.extend(batch.clone());
        if !opened {
            service.open();
            opened = true;
        } else if batch.is_empty() && api.state("slow").await == "completed" {
            break;
        }
    }

    let slow_status = api.wait_for("slow", "completed").await;
    let fast_status = api.wait_for("fast", "completed").await;
    assert!(fast_status["started_at"].as_str().unwrap() >= slow_status["finished_at"].as_str().unwrap());
    assert_eq!(slow_status["progress"]["completed"], slow_status["progress"]["total"]);

    let on_disk = std::fs::read_to_string(api.workdir.join("runs/slow/logs.ndjson")).unwrap();
    assert_eq!(parse_ndjson(&on_disk).unwrap(), events);
    // a finished run serves its log from disk with the same cursor semantics
    let (_, tail) = api.get("/runs/slow/logs?after=2").await;
    assert_eq!(parse_ndjson(&tail).unwrap(), events[2..].to_vec());

    let (s, report) = api.get_json("/runs/slow/report").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(report["models"][0]["model_id"], "svc");

    let (s, list) = api.get_json("/runs").await;
    assert_eq!(s, StatusCode::OK);
    let ids: Vec<&str> = list.as_array().unwrap().iter().map(|r| r["run_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["fast", "slow"]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn reports_plots_and_augmentation() {
    let api = Api::start().await;
    let (s, v) = api.post("/runs", &json!({"workload": {"id": "demo_hard"}})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{v}");
    assert_eq!(v["code"], "bad_request");
    let (s, _) = api.post("/runs", &oracle_config("base", "demo_hard")).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    api.wait_for("base", "completed").await;

    let (s, text) = api.get("/runs/base/report").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(text, std::fs::read_to_string(api.workdir.join("runs/base/report.json")).unwrap());

    let (s, plot) = api.get_json("/runs/base/plots/model_comparison/EA").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(plot["kind"], "model_comparison");
    assert_eq!(plot["series"].as_array().unwrap().len(), 2);
    assert_eq!(api.get("/runs/base/plots/scaling/ETC").await.0, StatusCode::OK);
    assert_eq!(api.get("/runs/base/plots/pie/EA").await.0, StatusCode::NOT_FOUND);
    assert_eq!(api.get("/runs/nope/status").await.0, StatusCode::NOT_FOUND);
    assert_eq!(api.get("/runs/nope/report").await.0, StatusCode::NOT_FOUND);

    let aug = |threshold: f64| json!({"run_id": "base", "threshold": threshold, "per_subcat": 3, "min_support": 1, "model": "noorder"});
    assert_eq!(api.post("/workloads/demo_hard/augment", &aug(0.0)).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(api.post("/workloads/demo_easy/augment", &aug(0.1)).await.0, StatusCode::BAD_REQUEST);
    let missing = json!({"run_id": "nope", "threshold": 0.1, "per_subcat": 3});
    assert_eq!(api.post("/workloads/demo_hard/augment", &missing).await.0, StatusCode::NOT_FOUND);
    let (s, summary) = api.post("/workloads/demo_hard/augment", &aug(0.1)).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{summary}");
    assert_eq!(summary["version"], 2);
    assert_eq!(summary["added"].as_array().unwrap().len(), 6);

    // rerun on the new version; the version plot gains a tick
    let mut cfg = oracle_config("after", "demo_hard");
    cfg["workload"]["version"] = json!(2);
    assert_eq!(api.post("/runs", &cfg).await.0, StatusCode::ACCEPTED);
    api.wait_for("after", "completed").await;
    let (s, plot) = api.get_json("/runs/after/plots/workload_versions/EA").await;
    assert_eq!(s, StatusCode::OK, "{plot}");
    assert_eq!(plot["x"], json!(["v1", "v2"]));

    let (_, workloads) = api.get_json("/workloads").await;
    assert!(workloads.as_array().unwrap().iter().any(|w| w["workload_id"] == "demo_hard"));
    let (_, catalog) = api.get_json("/catalog").await;
    assert_eq!(catalog.as_array().unwrap().len(), 2);
    assert!(catalog[0]["tables"].as_array().unwrap().len() >= 3);
    let (_, models) = api.get_json("/models").await;
    assert_eq!(models.as_array().unwrap().len(), 5);
}
