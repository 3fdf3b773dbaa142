use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::{json, Value};
use sqleval_core::bundled;
use sqleval_core::gateway::{
    AdapterKind, Exemplar, GenConfig, Gateway, GatewayOptions, GenerationRequest, ModelAdapter,
};
use sqleval_core::metrics::Metric;
use sqleval_core::pipeline::{run_evaluation, RunConfig, RunContext, WorkloadRef};

type Handler = dyn Fn(&str, &Value) -> (u16, String) + Send + Sync;

/// Minimal HTTP/1.1 server; records every (path, JSON body) it receives.
struct FakeServer {
    base: String,
    seen: Arc<Mutex<Vec<(String, Value)>>>,
}

impl FakeServer {
    fn start(handler: Arc<Handler>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let (handler, log) = (handler.clone(), log.clone());
                std::thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut request_line = String::new();
                    reader.read_line(&mut request_line).unwrap();
                    let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
                    let mut len = 0;
                    loop {
                        let mut line = String::new();
                        reader.read_line(&mut line).unwrap();
                        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                            len = v.trim().parse().unwrap();
                        }
                        if line == "\r\n" || line.is_empty() {
                            break;
                        }
                    }
                    let mut body = vec![0; len];
                    reader.read_exact(&mut body).unwrap();
                    let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
                    let (status, reply) = handler(&path, &body);
                    log.lock().unwrap().push((path, body));
                    let mut s = stream;
                    let _ = write!(
                        s,
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                        reply.len()
                    );
                });
            }
        });
        FakeServer { base, seen }
    }

    fn requests(&self) -> Vec<(String, Value)> {
        self.seen.lock().unwrap().clone()
    }
}

fn chat_reply(content: &str) -> String {
    json!({
        "choices": [{"message": {"role": "assistant", "content": content}}],
        "usage": {"prompt_tokens": 120, "completion_tokens": 15}
    })
    .to_string()
}

fn gateway(cache: Option<std::path::PathBuf>) -> Gateway {
    Gateway::new(GatewayOptions {
        cache_dir: cache,
        backoff: Duration::ZERO,
        ..Default::default()
    })
}

fn direct(base: &str) -> ModelAdapter {
    let mut a = ModelAdapter::new("llm", AdapterKind::DirectLlm);
    a.settings.endpoint = Some(base.to_string());
    a.settings.llm_id = Some("test-model".into());
    a
}

fn request() -> GenerationRequest {
    GenerationRequest {
        dp_id: "dp1".into(),
        question: "How many departments are there?".into(),
        schema_text: "CREATE TABLE dept (id INTEGER PRIMARY KEY, name TEXT);".into(),
        db_id: "company".into(),
        exemplars: vec![Exemplar {
            question: "List department names.".into(),
            sql: "SELECT name FROM dept".into(),
        }],
        ..Default::default()
    }
}

#[test]
fn direct_llm_prompt_extraction_and_usage() {
    let server = FakeServer::start(Arc::new(|_, _| {
        (200, chat_reply("Here you go:\n```sql\nSELECT COUNT(*) FROM dept;\n```\nDone."))
    }));
    let g = gateway(None);
    let r = g.generate_sql(&direct(&server.base), &request(), &GenConfig::default());
    assert_eq!(r.error, None);
    assert_eq!(r.sql_text, "SELECT COUNT(*) FROM dept");
    assert_eq!((r.input_tokens, r.output_tokens), (Some(120), Some(15)));
    assert_eq!(g.calls(), 1);

    let reqs = server.requests();
    assert_eq!(reqs.len(), 1);
    let (path, body) = &reqs[0];
    assert_eq!(path, "/chat/completions");
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["temperature"], 0.0);
    let user = body["messages"][1]["content"].as_str().unwrap();
    assert!(user.contains("How many departments are there?"));
    assert!(user.contains("CREATE TABLE dept"));
    assert!(user.contains("SELECT name FROM dept"), "exemplar missing: {user}");
    assert!(!user.contains("gt_sql"));
}

#[test]
fn provider_errors_are_classified() {
    let server = FakeServer::start(Arc::new(|_, body: &Value| {
        match body["model"].as_str() {
            Some("quota") => (429, "slow down".into()),
            Some("denied") => (401, "bad key".into()),
            _ => (200, json!({"unexpected": true}).to_string()),
        }
    }));
    let attempt = |model: &str| {
        let g = gateway(None);
        let mut a = direct(&server.base);
        a.settings.llm_id = Some(model.into());
        let r = g.generate_sql(&a, &request(), &GenConfig::default());
        (r.error.unwrap_or_default(), g.calls())
    };
    let (err, calls) = attempt("quota");
    assert!(err.contains("quota"), "{err}");
    assert_eq!(calls, 3);
    let (err, calls) = attempt("denied");
    assert!(err.contains("authentication"), "{err}");
    assert_eq!(calls, 1);
    let (err, _) = attempt("other");
    assert!(err.contains("unexpected reply"), "{err}");
}

#[test]
fn external_http_adapter() {
    let server = FakeServer::start(Arc::new(|_, _| (200, json!({"sql": "SELECT 1;"}).to_string())));
    let mut a = ModelAdapter::new("svc", AdapterKind::ExternalHttp);
    a.settings.endpoint = Some(format!("{}/t2s", server.base));
    let r = gateway(None).generate_sql(&a, &request(), &GenConfig::default());
    assert_eq!(r.error, None);
    assert_eq!(r.sql_text, "SELECT 1");
    let (path, body) = &server.requests()[0];
    assert_eq!(path, "/t2s");
    assert_eq!(body["db_id"], "company");
    assert_eq!(body["question"], "How many departments are there?");
}

#[test]
fn llm_run_end_to_end_with_cache() {
    let wd = tempfile::tempdir().unwrap();
    bundled::install(wd.path()).unwrap();
    let answers: BTreeMap<String, String> = std::fs::read_to_string(wd.path().join("workloads/demo_medium/v1.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            (v["question"].as_str().unwrap().to_string(), v["gt_sql"].as_str().unwrap().to_string())
        })
        .collect();
    let server = FakeServer::start(Arc::new(move |_, body: &Value| {
        let user = body["messages"][1]["content"].as_str().unwrap_or_default();
        let sql = answers
            .iter()
            .find(|(q, _)| user.contains(q.as_str()))
            .map(|(_, s)| s.clone())
            .unwrap_or_else(|| "SELECT 0".into());
        (200, chat_reply(&format!("```sql\n{sql}\n```")))
    }));

    let run = |id: &str| {
        let mut cfg = RunConfig::new(WorkloadRef::stored("demo_medium", None), vec![direct(&server.base)]);
        cfg.run_id = Some(id.into());
        run_evaluation(&cfg, &RunContext::new(wd.path())).unwrap()
    };
    let first = run("llm-1");
    assert_eq!(first.wall.gateway_calls, 20);
    let ea = first.report.scores("llm", Metric::EA).unwrap();
    assert_eq!(ea.overall.score, Some(1.0));
    let tu = first.report.scores("llm", Metric::TU).unwrap();
    assert_eq!(tu.overall.score, Some(135.0));

    let second = run("llm-2");
    assert_eq!(second.wall.gateway_calls, 0);
    assert_eq!(server.requests().len(), 20);
    assert_eq!(second.records, first.records);
    assert_eq!(second.report, first.report);
}
