//! Uniform interface to black-box text-to-SQL models, with response
//! caching, bounded-concurrency batching and deterministic mock adapters.

pub mod cache;
pub mod extract;
pub mod http;
pub mod mock;
pub mod prompt;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::sql::{SchemaMap, Subcategory};

pub use cache::{cache_key, ResponseCache};
pub use extract::extract_sql;
pub use mock::{mutate, template_pair, Mutation};

pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;
pub const DEFAULT_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    DirectLlm,
    ExternalHttp,
    MockOracle,
    MockMutant,
    MockTemplate,
}

impl AdapterKind {
    pub fn is_mock(self) -> bool {
        matches!(self, AdapterKind::MockOracle | AdapterKind::MockMutant | AdapterKind::MockTemplate)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterSettings {
    /// Chat base URL for `direct_llm`, full URL for `external_http`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub llm_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mutation: Option<Mutation>,
    /// Train-split exemplars included in `direct_llm` prompts.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub icl_examples: Option<usize>,
    /// Data point ids for which a mock adapter raises a gateway error.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fail_on: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAdapter {
    pub model_id: String,
    pub kind: AdapterKind,
    #[serde(default)]
    pub settings: AdapterSettings,
}

impl ModelAdapter {
    pub fn new(model_id: &str, kind: AdapterKind) -> Self {
        ModelAdapter {
            model_id: model_id.to_string(),
            kind,
            settings: AdapterSettings::default(),
        }
    }

    pub fn oracle(model_id: &str) -> Self {
        Self::new(model_id, AdapterKind::MockOracle)
    }

    pub fn mutant(model_id: &str, m: Mutation) -> Self {
        let mut a = Self::new(model_id, AdapterKind::MockMutant);
        a.settings.mutation = Some(m);
        a
    }

    pub fn template(model_id: &str) -> Self {
        Self::new(model_id, AdapterKind::MockTemplate)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.model_id.trim().is_empty() {
            return Err("model_id must not be empty".into());
        }
        match self.kind {
            AdapterKind::MockMutant if self.settings.mutation.is_none() => {
                Err(format!("{}: mock_mutant needs settings.mutation", self.model_id))
            }
            AdapterKind::ExternalHttp if self.settings.endpoint.is_none() => {
                Err(format!("{}: external_http needs settings.endpoint", self.model_id))
            }
            _ => match self.settings.temperature {
                Some(t) if t < 0.0 || !t.is_finite() => Err(format!("{}: temperature must be >= 0", self.model_id)),
                _ => Ok(()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub question: String,
    pub sql: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub dp_id: String,
    pub question: String,
    pub schema_text: String,
    pub db_id: String,
    pub iteration: u32,
    /// Visible to mock adapters only.
    pub gt_sql: Option<String>,
    pub schema_map: Option<SchemaMap>,
    pub exemplars: Vec<Exemplar>,
}

/// Run-level model settings; adapter settings take precedence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub llm_id: String,
    pub temperature: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            llm_id: "none".into(),
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub dp_id: String,
    pub model_id: String,
    pub sql_text: String,
    pub input_tokens: Option<u64>,
    pub output_tokens: Option<u64>,
    /// Character counts backing the token approximation.
    pub prompt_chars: u64,
    pub output_chars: u64,
    pub iteration: u32,
    /// Set when generation failed after all retries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub latency_ms: f64,
    #[serde(default)]
    pub cached: bool,
}

impl GenerationRecord {
    pub fn new(dp_id: &str, model_id: &str, iteration: u32) -> Self {
        GenerationRecord {
            dp_id: dp_id.to_string(),
            model_id: model_id.to_string(),
            sql_text: String::new(),
            input_tokens: None,
            output_tokens: None,
            prompt_chars: 0,
            output_chars: 0,
            iteration,
            error: None,
            latency_ms: 0.0,
            cached: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("network error: {0}")]
    Network(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("quota exceeded: {0}")]
    Quota(String),
    #[error("unexpected reply: {0}")]
    Protocol(String),
    #[error("adapter misconfigured: {0}")]
    Config(String),
    #[error("injected failure for {0}")]
    Injected(String),
}

impl GatewayError {
    fn retryable(&self) -> bool {
        !matches!(self, GatewayError::Config(_) | GatewayError::Auth(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentRequest {
    pub target: Subcategory,
    pub db_id: String,
    pub schema_text: String,
    pub exemplars: Vec<Exemplar>,
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub question: String,
    pub sql: String,
    pub db_id: String,
}

#[derive(Debug, Clone)]
pub struct GatewayOptions {
    pub cache_dir: Option<PathBuf>,
    pub max_in_flight: usize,
    pub attempts: u32,
    /// First retry delay; doubles on each further retry.
    pub backoff: Duration,
}

impl Default for GatewayOptions {
    fn default() -> Self {
        GatewayOptions {
            cache_dir: None,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            attempts: DEFAULT_ATTEMPTS,
            backoff: Duration::from_secs(1),
        }
    }
}

/// Shared by all workers of a run.
pub struct Gateway {
    opts: GatewayOptions,
    cache: Option<ResponseCache>,
    calls: AtomicU64,
    client: OnceLock<reqwest::blocking::Client>,
}

impl Gateway {
    pub fn new(opts: GatewayOptions) -> Self {
        Gateway {
            cache: opts.cache_dir.clone().map(ResponseCache::new),
            opts,
            calls: AtomicU64::new(0),
            client: OnceLock::new(),
        }
    }

    /// Model invocations so far, cache hits excluded.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    fn client(&self) -> &reqwest::blocking::Client {
        self.client.get_or_init(http::client)
    }

    fn with_retries<T>(&self, mut f: impl FnMut() -> Result<T, GatewayError>) -> Result<T, GatewayError> {
        let mut delay = self.opts.backoff;
        let mut attempt = 1;
        loop {
            self.calls.fetch_add(1, Ordering::SeqCst);
            match f() {
                Ok(v) => return Ok(v),
                Err(e) if !e.retryable() || attempt >= self.opts.attempts.max(1) => return Err(e),
                Err(e) => {
                    tracing::warn!(error = %e, attempt, "model call failed; retrying");
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
            }
        }
    }

    fn settings(adapter: &ModelAdapter, gen: &GenConfig) -> (String, f64) {
        (
            adapter.settings.llm_id.clone().unwrap_or_else(|| gen.llm_id.clone()),
            adapter.settings.temperature.unwrap_or(gen.temperature),
        )
    }

    /// One SQL string for one question. Model nonsense is returned as-is;
    /// gateway failures yield a record with `error` set.
    pub fn generate_sql(&self, adapter: &ModelAdapter, req: &GenerationRequest, gen: &GenConfig) -> GenerationRecord {
        let (llm_id, temperature) = Self::settings(adapter, gen);
        let user = prompt::sql_user_prompt(req);
        let mut material = format!("{}\n{}", prompt::SQL_SYSTEM_PROMPT, user);
        if adapter.kind.is_mock() {
            material.push_str(&format!(
                "\0gt={}\0mutation={:?}",
                req.gt_sql.as_deref().unwrap_or(""),
                adapter.settings.mutation
            ));
        }
        material.push_str(&format!("\0iteration={}", req.iteration));
        let key = cache_key(&adapter.model_id, &llm_id, temperature, &material);

        let mut rec = GenerationRecord::new(&req.dp_id, &adapter.model_id, req.iteration);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            return GenerationRecord {
                dp_id: req.dp_id.clone(),
                iteration: req.iteration,
                cached: true,
                ..hit
            };
        }
        rec.prompt_chars = (prompt::SQL_SYSTEM_PROMPT.len() + user.len()) as u64;
        let start = Instant::now();
        let result = self.with_retries(|| self.invoke(adapter, req, &llm_id, temperature, &user));
        rec.latency_ms = start.elapsed().as_secs_f64() * 1000.0;
        match result {
            Ok(reply) => {
                rec.output_chars = reply.text.chars().count() as u64;
                rec.sql_text = extract_sql(&reply.text);
                rec.input_tokens = reply.input_tokens;
                rec.output_tokens = reply.output_tokens;
                if let Some(c) = &self.cache {
                    if let Err(e) = c.put(&key, &rec) {
                        tracing::warn!(error = %e, "cannot write cache entry");
                    }
                }
            }
            Err(e) => rec.error = Some(e.to_string()),
        }
        rec
    }

    fn invoke(
        &self,
        adapter: &ModelAdapter,
        req: &GenerationRequest,
        llm_id: &str,
        temperature: f64,
        user: &str,
    ) -> Result<http::Reply, GatewayError> {
        if adapter.settings.fail_on.contains(&req.dp_id) {
            return Err(GatewayError::Injected(req.dp_id.clone()));
        }
        let mock = |text: String| http::Reply {
            text,
            input_tokens: None,
            output_tokens: None,
        };
        let gt = || {
            req.gt_sql
                .clone()
                .ok_or_else(|| GatewayError::Config("mock adapters need the ground truth".into()))
        };
        match adapter.kind {
            AdapterKind::MockOracle => Ok(mock(gt()?)),
            AdapterKind::MockMutant => {
                let m = adapter
                    .settings
                    .mutation
                    .ok_or_else(|| GatewayError::Config("mock_mutant needs a mutation".into()))?;
                Ok(mock(mutate(&gt()?, m, req.schema_map.as_ref())))
            }
            AdapterKind::MockTemplate => Err(GatewayError::Config(
                "mock_template only generates workload candidates".into(),
            )),
            AdapterKind::DirectLlm => {
                let base = adapter
                    .settings
                    .endpoint
                    .clone()
                    .or_else(|| std::env::var(http::BASE_URL_ENV).ok())
                    .ok_or_else(|| GatewayError::Config(format!("set {} or settings.endpoint", http::BASE_URL_ENV)))?;
                let key = std::env::var(http::API_KEY_ENV).ok();
                http::chat(self.client(), &base, key.as_deref(), llm_id, temperature, prompt::SQL_SYSTEM_PROMPT, user)
            }
            AdapterKind::ExternalHttp => {
                let endpoint = adapter
                    .settings
                    .endpoint
                    .as_deref()
                    .ok_or_else(|| GatewayError::Config("external_http needs settings.endpoint".into()))?;
                http::external(
                    self.client(),
                    endpoint,
                    &req.question,
                    &req.schema_text,
                    &req.db_id,
                    llm_id,
                    temperature,
                )
            }
        }
    }

    /// Same results as mapping `generate_sql` over `reqs`, with at most
    /// `max_in_flight` concurrent requests. Output order follows input.
    pub fn submit_batch(&self, adapter: &ModelAdapter, reqs: &[GenerationRequest], gen: &GenConfig) -> Vec<GenerationRecord> {
        let workers = self.opts.max_in_flight.max(1).min(reqs.len());
        if workers <= 1 {
            return reqs.iter().map(|r| self.generate_sql(adapter, r, gen)).collect();
        }
        let next = AtomicUsize::new(0);
        let out: Mutex<Vec<Option<GenerationRecord>>> = Mutex::new(vec![None; reqs.len()]);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(req) = reqs.get(i) else { break };
                    let rec = self.generate_sql(adapter, req, gen);
                    out.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(rec);
                });
            }
        });
        out.into_inner()
            .unwrap_or_else(|e| e.into_inner())
            .into_iter()
            .map(|r| r.expect("every request produces a record"))
            .collect()
    }

    /// One candidate question/SQL pair for workload augmentation.
    pub fn generate_candidate(
        &self,
        adapter: &ModelAdapter,
        req: &AugmentRequest,
        gen: &GenConfig,
    ) -> Result<CandidatePair, GatewayError> {
        let (llm_id, temperature) = Self::settings(adapter, gen);
        self.with_retries(|| match adapter.kind {
            AdapterKind::MockTemplate => {
                let (question, sql) = template_pair(req.target, req.attempt);
                Ok(CandidatePair {
                    question,
                    sql,
                    db_id: "company".into(),
                })
            }
            AdapterKind::DirectLlm => {
                let base = adapter
                    .settings
                    .endpoint
                    .clone()
                    .or_else(|| std::env::var(http::BASE_URL_ENV).ok())
                    .ok_or_else(|| GatewayError::Config(format!("set {} or settings.endpoint", http::BASE_URL_ENV)))?;
                let key = std::env::var(http::API_KEY_ENV).ok();
                let user = prompt::augment_user_prompt(req);
                let reply = http::chat(
                    self.client(),
                    &base,
                    key.as_deref(),
                    &llm_id,
                    temperature,
                    prompt::AUGMENT_SYSTEM_PROMPT,
                    &user,
                )?;
                parse_candidate(&reply.text, &req.db_id)
            }
            other => Err(GatewayError::Config(format!(
                "{other:?} adapters cannot generate workload candidates"
            ))),
        })
    }
}

fn parse_candidate(text: &str, db_id: &str) -> Result<CandidatePair, GatewayError> {
    let (start, end) = (text.find('{'), text.rfind('}'));
    let body = match (start, end) {
        (Some(s), Some(e)) if e > s => &text[s..=e],
        _ => return Err(GatewayError::Protocol("candidate reply has no JSON object".into())),
    };
    let v: serde_json::Value = serde_json::from_str(body).map_err(|e| GatewayError::Protocol(e.to_string()))?;
    match (v["question"].as_str(), v["sql"].as_str()) {
        (Some(q), Some(s)) => Ok(CandidatePair {
            question: q.to_string(),
            sql: extract_sql(s),
            db_id: db_id.to_string(),
        }),
        _ => Err(GatewayError::Protocol("candidate needs `question` and `sql`".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(i: usize) -> GenerationRequest {
        GenerationRequest {
            dp_id: format!("dp{i}"),
            question: format!("q{i}"),
            schema_text: "CREATE TABLE r (a, b);".into(),
            db_id: "t".into(),
            gt_sql: Some(format!("SELECT a, b FROM r WHERE a > {i}")),
            ..Default::default()
        }
    }

    fn quick(cache_dir: Option<PathBuf>) -> Gateway {
        Gateway::new(GatewayOptions {
            cache_dir,
            backoff: Duration::ZERO,
            ..Default::default()
        })
    }

    #[test]
    fn oracle_and_mutant() {
        let g = quick(None);
        let gen = GenConfig::default();
        let r = g.generate_sql(&ModelAdapter::oracle("o"), &req(1), &gen);
        assert_eq!(r.sql_text, "SELECT a, b FROM r WHERE a > 1");
        assert!(!r.cached && r.error.is_none());
        let m = ModelAdapter::mutant("m", Mutation::SwapFirstTwoSelectColumns);
        assert_eq!(g.generate_sql(&m, &req(1), &gen).sql_text, "SELECT b, a FROM r WHERE a > 1");
        assert_eq!(g.calls(), 2);
    }

    #[test]
    fn batch_preserves_order_and_isolates_failures() {
        let g = quick(None);
        let mut a = ModelAdapter::oracle("o");
        a.settings.fail_on = vec!["dp7".into()];
        let reqs: Vec<_> = (0..20).map(req).collect();
        let out = g.submit_batch(&a, &reqs, &GenConfig::default());
        assert_eq!(out.len(), 20);
        for (i, r) in out.iter().enumerate() {
            assert_eq!(r.dp_id, format!("dp{i}"));
            assert_eq!(r.error.is_some(), i == 7);
        }
        // 19 single calls plus three attempts for the failing item
        assert_eq!(g.calls(), 22);
        let sequential: Vec<_> = reqs.iter().map(|r| g.generate_sql(&a, r, &GenConfig::default())).collect();
        let strip = |v: &[GenerationRecord]| -> Vec<(String, Option<String>)> {
            v.iter().map(|r| (r.sql_text.clone(), r.error.clone())).collect()
        };
        assert_eq!(strip(&out), strip(&sequential));
    }

    #[test]
    fn cache_hits_make_no_calls() {
        let dir = tempfile::tempdir().unwrap();
        let a = ModelAdapter::oracle("o");
        let reqs: Vec<_> = (0..20).map(req).collect();
        let first = quick(Some(dir.path().to_path_buf()));
        first.submit_batch(&a, &reqs, &GenConfig::default());
        assert_eq!(first.calls(), 20);
        let second = quick(Some(dir.path().to_path_buf()));
        let out = second.submit_batch(&a, &reqs, &GenConfig::default());
        assert_eq!(second.calls(), 0);
        assert!(out.iter().all(|r| r.cached));
        let mut other_iter = req(0);
        other_iter.iteration = 1;
        let r = second.generate_sql(&a, &other_iter, &GenConfig::default());
        assert!(!r.cached);
    }

    #[test]
    fn template_adapter_yields_candidates_only() {
        let g = quick(None);
        let a = ModelAdapter::template("t");
        assert!(g.generate_sql(&a, &req(0), &GenConfig::default()).error.is_some());
        let c = g
            .generate_candidate(
                &a,
                &AugmentRequest {
                    target: "4.2".parse().unwrap(),
                    db_id: "company".into(),
                    schema_text: String::new(),
                    exemplars: vec![],
                    attempt: 0,
                },
                &GenConfig::default(),
            )
            .unwrap();
        assert!(c.sql.contains(" IN (SELECT"));
    }

    #[test]
    fn candidate_json_is_parsed() {
        let c = parse_candidate("Here you go: {\"question\": \"q?\", \"sql\": \"SELECT 1;\"}", "db").unwrap();
        assert_eq!(c.sql, "SELECT 1");
        assert!(parse_candidate("nope", "db").is_err());
    }
}
