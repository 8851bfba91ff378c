//! Uniform chat-completion client.
//!
//! A [`Gateway`] wraps any [`ChatBackend`] (HTTP endpoint, scripted mock,
//! replay log) with retries, optional rate limiting and an append-only
//! replay log. It is cheap to clone and safe to share across workers.

mod http;
mod mock;
mod replay;

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub(crate) use http::map_reqwest;
pub use http::HttpBackend;
pub use mock::{EchoBackend, FnBackend, Script, ScriptRule, ScriptedBackend};
pub use replay::{ReplayBackend, ReplayEntry, ReplayLog};

use crate::util::{par_map, sha256_hex};

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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    /// Empty means "use the gateway's default model".
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f32,
    pub max_new_tokens: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stop: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl CompletionRequest {
    pub fn user(prompt: impl Into<String>) -> Self {
        Self {
            model: String::new(),
            messages: vec![ChatMessage {
                role: Role::User,
                content: prompt.into(),
            }],
            temperature: 0.0,
            max_new_tokens: 512,
            stop: Vec::new(),
            seed: None,
        }
    }

    pub fn temperature(mut self, t: f32) -> Self {
        self.temperature = t;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn max_new_tokens(mut self, n: u32) -> Self {
        self.max_new_tokens = n;
        self
    }

    pub fn stop(mut self, stop: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.stop = stop.into_iter().map(Into::into).collect();
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest(
                "messages must not be empty".into(),
            ));
        }
        if self.max_new_tokens == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_new_tokens must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Stable content hash used as the replay key.
    pub fn hash(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("request serializes")
                .as_bytes(),
        )
    }

    /// All message contents, newline separated.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

/// What a backend returns for one successful call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendReply {
    pub text: String,
    pub finish_reason: String,
    pub usage: Option<TokenUsage>,
}

impl BackendReply {
    pub fn stop(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish_reason: "stop".into(),
            usage: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub finish_reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<TokenUsage>,
    pub latency_ms: u64,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("no replay entry for request {0}")]
    ReplayMiss(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted {
        attempts: u32,
        last: Box<GatewayError>,
    },
}

impl GatewayError {
    /// Whether a retry has a chance of succeeding.
    pub fn is_transient(&self) -> bool {
        match self {
            GatewayError::Transport(_) | GatewayError::Timeout(_) => true,
            GatewayError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn chat(&self, request: &CompletionRequest) -> Result<BackendReply, GatewayError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, retry: u32) -> Duration {
        self.backoff_base.saturating_mul(1u32 << retry.min(16))
    }
}

/// Spaces request starts at least `interval` apart.
#[derive(Debug)]
struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().expect("limiter lock");
            let now = Instant::now();
            let start = (*next).max(now);
            *next = start + self.interval;
            start - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    default_model: String,
    retry: RetryPolicy,
    limiter: Option<Arc<RateLimiter>>,
    log: Option<Arc<ReplayLog>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("default_model", &self.default_model)
            .field("retry", &self.retry)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(backend: impl ChatBackend + 'static) -> Self {
        Self::from_arc(Arc::new(backend))
    }

    pub fn from_arc(backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            backend,
            default_model: String::new(),
            retry: RetryPolicy::default(),
            limiter: None,
            log: None,
        }
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.default_model = model.into();
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_rate_limit(mut self, requests_per_second: f64) -> Self {
        if requests_per_second > 0.0 {
            self.limiter = Some(Arc::new(RateLimiter {
                interval: Duration::from_secs_f64(1.0 / requests_per_second),
                next: Mutex::new(Instant::now()),
            }));
        }
        self
    }

    pub fn with_replay_log(mut self, log: Arc<ReplayLog>) -> Self {
        self.log = Some(log);
        self
    }

    pub fn default_model(&self) -> &str {
        &self.default_model
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        request.validate()?;
        let mut request = request.clone();
        if request.model.is_empty() {
            request.model = self.default_model.clone();
        }
        let started = Instant::now();
        let mut attempts = 0;
        let outcome = loop {
            attempts += 1;
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            match self.backend.chat(&request) {
                Ok(reply) => break Ok(reply),
                Err(err) if err.is_transient() && attempts <= self.retry.max_retries => {
                    tracing::debug!(attempt = attempts, error = %err, "retrying request");
                    std::thread::sleep(self.retry.backoff(attempts - 1));
                }
                Err(err) if err.is_transient() => {
                    break Err(GatewayError::RetriesExhausted {
                        attempts,
                        last: Box::new(err),
                    })
                }
                Err(err) => break Err(err),
            }
        };
        let result = outcome.map(|reply| CompletionResult {
            text: reply.text,
            finish_reason: reply.finish_reason,
            usage: reply.usage,
            latency_ms: started.elapsed().as_millis() as u64,
            attempts,
        });
        if let Some(log) = &self.log {
            if let Err(err) = log.append(&request, &result) {
                tracing::warn!(error = %err, "failed to append to replay log");
            }
        }
        result
    }

    /// Runs `requests` with at most `max_in_flight` outstanding. Results
    /// line up with the inputs; one failure never aborts the batch.
    pub fn complete_many(
        &self,
        requests: &[CompletionRequest],
        max_in_flight: usize,
    ) -> Vec<Result<CompletionResult, GatewayError>> {
        par_map(requests, max_in_flight, |req| self.complete(req))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};

    fn fast_retry() -> RetryPolicy {
        RetryPolicy {
            max_retries: 3,
            backoff_base: Duration::from_millis(1),
        }
    }

    #[test]
    fn echo_returns_prompt() {
        let gw = Gateway::new(EchoBackend);
        let res = gw
            .complete(&CompletionRequest::user("hello there"))
            .unwrap();
        assert_eq!(res.text, "hello there");
        assert_eq!(res.attempts, 1);
    }

    #[test]
    fn invalid_requests_are_rejected() {
        let gw = Gateway::new(EchoBackend);
        let mut req = CompletionRequest::user("x");
        req.messages.clear();
        assert!(matches!(
            gw.complete(&req),
            Err(GatewayError::InvalidRequest(_))
        ));
        let req = CompletionRequest::user("x").max_new_tokens(0);
        assert!(matches!(
            gw.complete(&req),
            Err(GatewayError::InvalidRequest(_))
        ));
    }

    #[test]
    fn transient_failures_are_retried() {
        let calls = Arc::new(AtomicU32::new(0));
        let seen = calls.clone();
        let backend = FnBackend::new(move |_req| {
            if seen.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(GatewayError::Status {
                    status: 503,
                    body: "busy".into(),
                })
            } else {
                Ok("ok".into())
            }
        });
        let gw = Gateway::new(backend).with_retry(fast_retry());
        let res = gw.complete(&CompletionRequest::user("x")).unwrap();
        assert_eq!(res.text, "ok");
        assert_eq!(res.attempts, 3);
    }

    #[test]
    fn retries_are_bounded() {
        let calls = Arc::new(AtomicU32::new(0));
        let seen = calls.clone();
        let backend = FnBackend::new(move |_req| {
            seen.fetch_add(1, Ordering::SeqCst);
            Err(GatewayError::Transport("connection refused".into()))
        });
        let gw = Gateway::new(backend).with_retry(fast_retry());
        let err = gw.complete(&CompletionRequest::user("x")).unwrap_err();
        assert!(matches!(
            err,
            GatewayError::RetriesExhausted { attempts: 4, .. }
        ));
        assert_eq!(calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn permanent_failures_are_not_retried() {
        let calls = Arc::new(AtomicU32::new(0));
        let seen = calls.clone();
        let backend = FnBackend::new(move |_req| {
            seen.fetch_add(1, Ordering::SeqCst);
            Err(GatewayError::Status {
                status: 400,
                body: "bad".into(),
            })
        });
        let gw = Gateway::new(backend).with_retry(fast_retry());
        assert!(gw.complete(&CompletionRequest::user("x")).is_err());
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn backoff_doubles() {
        let r = RetryPolicy::default();
        assert_eq!(r.backoff(0), Duration::from_millis(500));
        assert_eq!(r.backoff(2), Duration::from_millis(2000));
    }

    #[test]
    fn default_model_fills_empty_model() {
        let gw = Gateway::new(FnBackend::new(|req: &CompletionRequest| {
            Ok(req.model.clone())
        }))
        .with_model("tiny");
        assert_eq!(
            gw.complete(&CompletionRequest::user("x")).unwrap().text,
            "tiny"
        );
        let mut req = CompletionRequest::user("x");
        req.model = "other".into();
        assert_eq!(gw.complete(&req).unwrap().text, "other");
    }

    #[test]
    fn complete_many_keeps_order() {
        let gw = Gateway::new(EchoBackend);
        let reqs: Vec<_> = ["a", "b", "c"]
            .iter()
            .map(|p| CompletionRequest::user(*p))
            .collect();
        let out: Vec<String> = gw
            .complete_many(&reqs, 3)
            .into_iter()
            .map(|r| r.unwrap().text)
            .collect();
        assert_eq!(out, vec!["a", "b", "c"]);
    }

    #[test]
    fn complete_many_is_order_independent_of_concurrency() {
        let gw = Gateway::new(FnBackend::new(|req: &CompletionRequest| {
            let n: u64 = req.prompt_text().parse().unwrap();
            std::thread::sleep(Duration::from_micros((40 - n) * 50));
            Ok(format!("r{n}"))
        }));
        let reqs: Vec<_> = (0..40)
            .map(|i| CompletionRequest::user(i.to_string()))
            .collect();
        let one: Vec<_> = gw
            .complete_many(&reqs, 1)
            .into_iter()
            .map(|r| r.unwrap().text)
            .collect();
        let eight: Vec<_> = gw
            .complete_many(&reqs, 8)
            .into_iter()
            .map(|r| r.unwrap().text)
            .collect();
        assert_eq!(one, eight);
    }

    #[test]
    fn complete_many_bounds_in_flight() {
        let current = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let (c, p) = (current.clone(), peak.clone());
        let gw = Gateway::new(FnBackend::new(move |_req| {
            let now = c.fetch_add(1, Ordering::SeqCst) + 1;
            p.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(5));
            c.fetch_sub(1, Ordering::SeqCst);
            Ok("x".into())
        }));
        let reqs: Vec<_> = (0..24)
            .map(|i| CompletionRequest::user(i.to_string()))
            .collect();
        let out = gw.complete_many(&reqs, 3);
        assert_eq!(out.len(), 24);
        assert!(peak.load(Ordering::SeqCst) <= 3);
    }

    #[test]
    fn complete_many_reports_errors_positionally() {
        let script = Script {
            rules: vec![ScriptRule::fail(["boom"], "scripted failure")],
            default: None,
        };
        let gw = Gateway::new(ScriptedBackend::new(script).unwrap());
        let reqs: Vec<_> = ["ok 1", "boom", "ok 2"]
            .iter()
            .map(|p| CompletionRequest::user(*p))
            .collect();
        let out = gw.complete_many(&reqs, 2);
        assert_eq!(out[0].as_ref().unwrap().text, "ok 1");
        assert!(matches!(out[1], Err(GatewayError::Backend(_))));
        assert_eq!(out[2].as_ref().unwrap().text, "ok 2");
    }

    #[test]
    fn rate_limit_spaces_requests() {
        let gw = Gateway::new(EchoBackend).with_rate_limit(200.0);
        let start = Instant::now();
        for _ in 0..5 {
            gw.complete(&CompletionRequest::user("x")).unwrap();
        }
        assert!(start.elapsed() >= Duration::from_millis(19));
    }

    #[test]
    fn request_hash_depends_on_content() {
        let a = CompletionRequest::user("x").seed(1);
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), CompletionRequest::user("x").seed(2).hash());
        assert_ne!(a.hash(), CompletionRequest::user("y").seed(1).hash());
    }
}
