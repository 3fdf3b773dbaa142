//! Network adapters: an OpenAI-compatible chat endpoint and a generic JSON
//! endpoint fronting an external text-to-SQL system.

use std::time::Duration;

use serde_json::{json, Value};

use super::GatewayError;

pub const BASE_URL_ENV: &str = "SQLEVAL_LLM_BASE_URL";
pub const API_KEY_ENV: &str = "SQLEVAL_LLM_API_KEY";

/// Raw model reply with provider-reported usage when available.
#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub text: String,
    pub input_tokens: Option<u64>,
    pub output_tokens: Option<u64>,
}

pub fn client() -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(120))
        .build()
        .expect("http client builds")
}

fn post(client: &reqwest::blocking::Client, url: &str, key: Option<&str>, body: &Value) -> Result<Value, GatewayError> {
    let mut req = client.post(url).json(body);
    if let Some(k) = key {
        req = req.bearer_auth(k);
    }
    let resp = req.send().map_err(|e| GatewayError::Network(e.to_string()))?;
    let status = resp.status();
    let text = resp.text().map_err(|e| GatewayError::Network(e.to_string()))?;
    if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
        return Err(GatewayError::Auth(format!("{status}: {text}")));
    }
    if status == reqwest::StatusCode::TOO_MANY_REQUESTS {
        return Err(GatewayError::Quota(text));
    }
    if !status.is_success() {
        return Err(GatewayError::Network(format!("{status}: {text}")));
    }
    serde_json::from_str(&text).map_err(|e| GatewayError::Protocol(e.to_string()))
}

/// Chat-completion request against `<base>/chat/completions`.
pub fn chat(
    client: &reqwest::blocking::Client,
    base_url: &str,
    api_key: Option<&str>,
    model: &str,
    temperature: f64,
    system: &str,
    user: &str,
) -> Result<Reply, GatewayError> {
    let url = format!("{}/chat/completions", base_url.trim_end_matches('/'));
    let body = json!({
        "model": model,
        "temperature": temperature,
        "messages": [
            {"role": "system", "content": system},
            {"role": "user", "content": user},
        ],
    });
    let v = post(client, &url, api_key, &body)?;
    let text = v["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| GatewayError::Protocol("reply has no choices[0].message.content".into()))?
        .to_string();
    Ok(Reply {
        text,
        input_tokens: v["usage"]["prompt_tokens"].as_u64(),
        output_tokens: v["usage"]["completion_tokens"].as_u64(),
    })
}

/// Generic adapter: POSTs the question and schema, expects `{"sql": ...}`.
pub fn external(
    client: &reqwest::blocking::Client,
    endpoint: &str,
    question: &str,
    schema_text: &str,
    db_id: &str,
    llm_id: &str,
    temperature: f64,
) -> Result<Reply, GatewayError> {
    let body = json!({
        "question": question,
        "schema": schema_text,
        "db_id": db_id,
        "llm_id": llm_id,
        "temperature": temperature,
    });
    let v = post(client, endpoint, None, &body)?;
    let text = v["sql"]
        .as_str()
        .ok_or_else(|| GatewayError::Protocol("reply has no `sql` field".into()))?
        .to_string();
    Ok(Reply {
        text,
        input_tokens: v["input_tokens"].as_u64(),
        output_tokens: v["output_tokens"].as_u64(),
    })
}
