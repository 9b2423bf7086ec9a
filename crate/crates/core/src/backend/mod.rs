//! Chat-completion backends and the client that drives them.
//!
//! [`ChatBackend`] is a single request/response exchange. [`Client`] adds the
//! generation contract on top: stop-sequence handling, retries with
//! exponential backoff, and ordered batch execution with a bounded number of
//! requests in flight.

mod http;
mod mock;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::promptgen::PromptBundle;

pub use http::{parse_response_body, request_body, HttpBackend, HttpConfig};
pub use mock::{InFlightProbe, MockBackend};

/// Requests allowed in flight by default.
pub const DEFAULT_MAX_IN_FLIGHT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
        }
    }
}

/// Sampling configuration sent with every request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub min_p: f64,
    pub seed: u64,
    /// `None` disables stop handling, e.g. for translations.
    pub stop: Option<String>,
    pub max_sequence_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 0.5,
            min_p: 0.1,
            seed: 42,
            stop: Some("}".to_string()),
            max_sequence_tokens: 2048,
        }
    }
}

impl GenerationParams {
    /// Token budget for a prompt with `shots` in-context examples: doubled when any are present.
    pub fn max_tokens_for(&self, shots: usize) -> u32 {
        if shots > 0 {
            self.max_sequence_tokens.saturating_mul(2)
        } else {
            self.max_sequence_tokens
        }
    }

    pub fn without_stop(mut self) -> Self {
        self.stop = None;
        self
    }
}

/// A request as handed to a backend; `max_tokens` is already resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub min_p: f64,
    pub seed: u64,
    pub stop: Option<String>,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>, params: &GenerationParams, max_tokens: u32) -> Self {
        ChatRequest {
            messages,
            temperature: params.temperature,
            min_p: params.min_p,
            seed: params.seed,
            stop: params.stop.clone(),
            max_tokens,
        }
    }

    pub fn last_user_message(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    /// The server halted on the stop sequence and dropped it from `text`.
    pub matched_stop: bool,
    pub completion_tokens: Option<u32>,
}

impl ChatResponse {
    pub fn stopped(text: impl Into<String>) -> Self {
        ChatResponse {
            text: text.into(),
            finish_reason: FinishReason::Stop,
            matched_stop: false,
            completion_tokens: None,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    /// Transport failures and 5xx-class responses; retried.
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("request rejected: {0}")]
    Permanent(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transient(_))
    }
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).send(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Arc<B> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).send(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).send(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn no_backoff(max_attempts: u32) -> Self {
        RetryPolicy {
            max_attempts,
            initial_backoff: Duration::ZERO,
            multiplier: 1.0,
        }
    }

    /// Delay before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        self.initial_backoff
            .mul_f64(self.multiplier.powi(retry.saturating_sub(1) as i32))
    }
}

/// One model answer, successful or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAnswer {
    pub text: String,
    pub finished_by: FinishReason,
    #[serde(with = "duration_ms")]
    pub latency: Duration,
    pub endpoint_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub attempts: u32,
}

impl RawAnswer {
    pub fn is_error(&self) -> bool {
        self.finished_by == FinishReason::Error
    }
}

mod duration_ms {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Cuts `text` after the first occurrence of `stop`; if the server already
/// consumed the stop sequence, appends it back so the object is closed.
pub fn apply_stop(response: ChatResponse, stop: Option<&str>) -> (String, FinishReason) {
    let ChatResponse {
        mut text,
        finish_reason,
        matched_stop,
        ..
    } = response;
    match stop.filter(|s| !s.is_empty()) {
        Some(stop) => {
            if let Some(pos) = text.find(stop) {
                text.truncate(pos + stop.len());
                (text, FinishReason::Stop)
            } else if matched_stop {
                text.push_str(stop);
                (text, FinishReason::Stop)
            } else {
                (text, finish_reason)
            }
        }
        None => (text, finish_reason),
    }
}

pub struct Client<B> {
    backend: B,
    retry: RetryPolicy,
    max_in_flight: usize,
}

impl<B: ChatBackend> Client<B> {
    pub fn new(backend: B) -> Self {
        Client {
            backend,
            retry: RetryPolicy::default(),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, max_in_flight: usize) -> Self {
        self.max_in_flight = max_in_flight.max(1);
        self
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    /// Sends `bundle`, doubling the token budget when it carries shots.
    pub fn complete(&self, bundle: &PromptBundle, params: &GenerationParams) -> RawAnswer {
        let max_tokens = params.max_tokens_for(bundle.shots.len());
        self.complete_request(ChatRequest::new(bundle.to_messages(), params, max_tokens))
    }

    pub fn complete_request(&self, request: ChatRequest) -> RawAnswer {
        let started = Instant::now();
        let mut attempts = 0;
        let outcome = loop {
            attempts += 1;
            match self.backend.send(&request) {
                Ok(resp) => break Ok(resp),
                Err(e) if e.is_retryable() && attempts < self.retry.max_attempts => {
                    let wait = self.retry.backoff(attempts);
                    log::warn!(
                        "{}: attempt {attempts} failed ({e}); retrying in {wait:?}",
                        self.backend.id()
                    );
                    std::thread::sleep(wait);
                }
                Err(e) => break Err(e),
            }
        };
        let endpoint_id = self.backend.id().to_string();
        match outcome {
            Ok(resp) => {
                let completion_tokens = resp.completion_tokens;
                let (text, finished_by) = apply_stop(resp, request.stop.as_deref());
                RawAnswer {
                    text,
                    finished_by,
                    latency: started.elapsed(),
                    endpoint_id,
                    completion_tokens,
                    error: None,
                    attempts,
                }
            }
            Err(e) => {
                log::error!("{endpoint_id}: giving up after {attempts} attempt(s): {e}");
                RawAnswer {
                    text: String::new(),
                    finished_by: FinishReason::Error,
                    latency: started.elapsed(),
                    endpoint_id,
                    completion_tokens: None,
                    error: Some(e.to_string()),
                    attempts,
                }
            }
        }
    }

    /// Answers in input order; at most `max_in_flight` requests run at once and
    /// a failing item never aborts the others.
    pub fn complete_batch(&self, bundles: &[PromptBundle], params: &GenerationParams) -> Vec<RawAnswer> {
        self.run_batch(bundles.len(), |i| self.complete(&bundles[i], params))
    }

    pub fn complete_requests(&self, requests: Vec<ChatRequest>) -> Vec<RawAnswer> {
        let slots: Vec<Mutex<Option<ChatRequest>>> = requests.into_iter().map(|r| Mutex::new(Some(r))).collect();
        self.run_batch(slots.len(), |i| {
            let req = slots[i].lock().expect("poisoned").take().expect("taken once");
            self.complete_request(req)
        })
    }

    fn run_batch<F>(&self, n: usize, job: F) -> Vec<RawAnswer>
    where
        F: Fn(usize) -> RawAnswer + Sync,
    {
        let results: Vec<Mutex<Option<RawAnswer>>> = (0..n).map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.max_in_flight.min(n);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        break;
                    }
                    let answer = job(i);
                    *results[i].lock().expect("poisoned") = Some(answer);
                });
            }
        });
        results
            .into_iter()
            .map(|m| m.into_inner().expect("poisoned").expect("every slot filled"))
            .collect()
    }
}
