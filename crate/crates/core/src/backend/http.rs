use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use reqwest::blocking::Client as HttpClient;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, FinishReason};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Base URL up to and including the API version, e.g. `http://localhost:8000/v1`.
    pub base_url: String,
    pub model: String,
    #[serde(skip)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    300
}

/// Chat-completions endpoint over HTTP.
pub struct HttpBackend {
    config: HttpConfig,
    client: HttpClient,
    send_min_p: AtomicBool,
    id: String,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let client = HttpClient::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Permanent(format!("http client: {e}")))?;
        let id = format!("{}#{}", config.base_url.trim_end_matches('/'), config.model);
        Ok(HttpBackend {
            config,
            client,
            send_min_p: AtomicBool::new(true),
            id,
        })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn post(&self, body: &Value) -> Result<(StatusCode, String), BackendError> {
        let mut req = self.client.post(self.url()).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| BackendError::Transient(format!("transport: {e}")))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| BackendError::Transient(format!("reading body: {e}")))?;
        Ok((status, text))
    }
}

/// Request body in the chat-completions convention. `min_p` is a server
/// extension and only included when `include_min_p` is set.
pub fn request_body(request: &ChatRequest, model: &str, include_min_p: bool) -> Value {
    let mut body = json!({
        "model": model,
        "messages": request.messages,
        "temperature": request.temperature,
        "seed": request.seed,
        "max_tokens": request.max_tokens,
    });
    if let Some(stop) = &request.stop {
        body["stop"] = json!([stop]);
    }
    if include_min_p {
        body["min_p"] = json!(request.min_p);
    }
    body
}

/// Parses a chat-completions response body.
///
/// When the server reports no `stop_reason`, a `stop` finish over text with
/// more opening than closing braces is taken as a consumed stop sequence.
pub fn parse_response_body(body: &str, stop: Option<&str>) -> Result<ChatResponse, BackendError> {
    let v: Value =
        serde_json::from_str(body).map_err(|e| BackendError::Permanent(format!("malformed response: {e}")))?;
    let choice = v["choices"]
        .get(0)
        .ok_or_else(|| BackendError::Permanent("response has no choices".into()))?;
    let text = choice["message"]["content"].as_str().unwrap_or_default().to_string();
    let finish_reason = match choice["finish_reason"].as_str() {
        Some("length") => FinishReason::Length,
        Some("stop") | None => FinishReason::Stop,
        Some(_) => FinishReason::Stop,
    };
    let matched_stop = finish_reason == FinishReason::Stop
        && match (&choice["stop_reason"], stop) {
            (Value::String(s), Some(stop)) => s == stop,
            (Value::Null, Some("}")) => text.matches('{').count() > text.matches('}').count(),
            _ => false,
        };
    let completion_tokens = v["usage"]["completion_tokens"].as_u64().map(|t| t as u32);
    Ok(ChatResponse {
        text,
        finish_reason,
        matched_stop,
        completion_tokens,
    })
}

fn classify_status(status: StatusCode, body: &str) -> BackendError {
    let msg = format!("{status}: {}", body.chars().take(300).collect::<String>());
    if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
        BackendError::Auth(msg)
    } else if status.is_server_error()
        || status == StatusCode::TOO_MANY_REQUESTS
        || status == StatusCode::REQUEST_TIMEOUT
    {
        BackendError::Transient(msg)
    } else {
        BackendError::Permanent(msg)
    }
}

impl ChatBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let with_min_p = self.send_min_p.load(Ordering::Relaxed);
        let (mut status, mut body) = self.post(&request_body(request, &self.config.model, with_min_p))?;
        if with_min_p && status == StatusCode::BAD_REQUEST && body.contains("min_p") {
            if self.send_min_p.swap(false, Ordering::Relaxed) {
                log::warn!("{}: server rejected min_p; continuing without it", self.id);
            }
            (status, body) = self.post(&request_body(request, &self.config.model, false))?;
        }
        if !status.is_success() {
            return Err(classify_status(status, &body));
        }
        parse_response_body(&body, request.stop.as_deref())
    }
}
