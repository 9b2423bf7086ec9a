use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse};

type Responder = dyn Fn(&ChatRequest) -> Result<ChatResponse, BackendError> + Send + Sync;

/// Deterministic in-process backend. The response depends only on the request.
pub struct MockBackend {
    id: String,
    responder: Box<Responder>,
}

impl MockBackend {
    pub fn new<F>(id: impl Into<String>, responder: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<ChatResponse, BackendError> + Send + Sync + 'static,
    {
        MockBackend {
            id: id.into(),
            responder: Box::new(responder),
        }
    }

    /// Answers keyed by the text of the final user message. Unknown prompts
    /// are rejected as permanent errors.
    pub fn canned(answers: HashMap<String, String>) -> Self {
        MockBackend::new("mock:canned", move |req| {
            let key = req.last_user_message().unwrap_or_default();
            answers
                .get(key)
                .map(ChatResponse::stopped)
                .ok_or_else(|| BackendError::Permanent(format!("no canned answer for prompt `{key}`")))
        })
    }

    /// Returns the final user message unchanged.
    pub fn echo() -> Self {
        MockBackend::new("mock:echo", |req| {
            Ok(ChatResponse::stopped(req.last_user_message().unwrap_or_default()))
        })
    }
}

impl ChatBackend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (self.responder)(request)
    }
}

/// Wraps a backend and records the peak number of concurrent `send` calls.
pub struct InFlightProbe<B> {
    inner: B,
    hold: Duration,
    current: AtomicUsize,
    peak: AtomicUsize,
    total: AtomicUsize,
}

impl<B> InFlightProbe<B> {
    /// `hold` keeps each call open long enough for overlap to be observable.
    pub fn new(inner: B, hold: Duration) -> Self {
        InFlightProbe {
            inner,
            hold,
            current: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            total: AtomicUsize::new(0),
        }
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn total(&self) -> usize {
        self.total.load(Ordering::SeqCst)
    }
}

impl<B: ChatBackend> ChatBackend for InFlightProbe<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        self.total.fetch_add(1, Ordering::SeqCst);
        std::thread::sleep(self.hold);
        let out = self.inner.send(request);
        self.current.fetch_sub(1, Ordering::SeqCst);
        out
    }
}
