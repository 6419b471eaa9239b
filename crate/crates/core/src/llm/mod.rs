//! Uniform completion interface over interchangeable LLM backends.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::exec;

mod mock;
mod remote;
pub mod transport;

pub use mock::{MockConfig, MockLlm, ScriptedLlm};
pub use remote::{ChatClient, ChatConfig};
pub use transport::{RateLimiter, RetryPolicy};

/// Default cap on returned characters.
pub const DEFAULT_MAX_OUTPUT_CHARS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermanentKind {
    Authentication,
    ClientError(u16),
    EmptyBody,
    Decode,
    Config,
}

impl fmt::Display for PermanentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PermanentKind::Authentication => f.write_str("authentication"),
            PermanentKind::ClientError(code) => write!(f, "client error {code}"),
            PermanentKind::EmptyBody => f.write_str("empty body"),
            PermanentKind::Decode => f.write_str("decode"),
            PermanentKind::Config => f.write_str("configuration"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("backend unavailable after {attempts} attempt(s): {message}")]
    Retriable { attempts: u32, message: String },
    #[error("{kind}: {message}")]
    Permanent { kind: PermanentKind, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl LlmError {
    pub fn permanent(kind: PermanentKind, message: impl Into<String>) -> Self {
        LlmError::Permanent {
            kind,
            message: message.into(),
        }
    }

    pub fn is_retriable(&self) -> bool {
        matches!(self, LlmError::Retriable { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_output_chars: usize,
    /// In `[0, 2]`.
    pub temperature: f64,
    /// Opaque correlation id, echoed in logs.
    pub request_tag: String,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        CompletionRequest {
            prompt: prompt.into(),
            max_output_chars: DEFAULT_MAX_OUTPUT_CHARS,
            temperature: 0.0,
            request_tag: String::new(),
        }
    }

    pub fn tagged(mut self, tag: impl Into<String>) -> Self {
        self.request_tag = tag.into();
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.prompt.is_empty() {
            return Err(LlmError::InvalidRequest("prompt is empty".into()));
        }
        if self.max_output_chars == 0 {
            return Err(LlmError::InvalidRequest("max_output_chars must be > 0".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub backend_name: String,
    pub latency_ms: u64,
    pub attempt_count: u32,
}

/// A completion backend. Implementations must be shareable across worker
/// threads and must not panic on odd model output.
pub trait LlmBackend: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError>;
}

impl<T: LlmBackend + ?Sized> LlmBackend for Box<T> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        (**self).complete(request)
    }
}

impl<T: LlmBackend + ?Sized> LlmBackend for std::sync::Arc<T> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        (**self).complete(request)
    }
}

/// Per-request outcomes of [`batch_complete`], in input order.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub results: Vec<Result<CompletionResult, LlmError>>,
    pub failures: usize,
}

/// Completes every request on at most `parallelism` workers. Failures stay
/// in their slot; the batch itself never fails.
pub fn batch_complete<B: LlmBackend + ?Sized>(
    backend: &B,
    requests: &[CompletionRequest],
    parallelism: usize,
) -> BatchOutcome {
    let parallelism = parallelism.max(1);
    let results = exec::with_workers(parallelism, || {
        exec::map(exec::for_workers(parallelism), requests, |req| {
            req.validate().and_then(|_| backend.complete(req))
        })
    });
    let failures = results.iter().filter(|r| r.is_err()).count();
    BatchOutcome { results, failures }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_validation() {
        assert!(CompletionRequest::new("x").validate().is_ok());
        assert!(CompletionRequest::new("").validate().is_err());
        let mut r = CompletionRequest::new("x");
        r.temperature = 2.5;
        assert!(r.validate().is_err());
        r.temperature = 0.0;
        r.max_output_chars = 0;
        assert!(r.validate().is_err());
    }

    #[test]
    fn batch_preserves_order() {
        let backend = ScriptedLlm::new("echo", |req: &CompletionRequest| Ok(req.prompt.clone()));
        let reqs: Vec<_> = ["a", "b", "c"].iter().map(|p| CompletionRequest::new(*p)).collect();
        let out = batch_complete(&backend, &reqs, 2);
        let texts: Vec<_> = out.results.iter().map(|r| r.as_ref().unwrap().text.clone()).collect();
        assert_eq!(texts, ["a", "b", "c"]);
        assert_eq!(out.failures, 0);
    }

    #[test]
    fn batch_keeps_failures_in_slot() {
        let backend = ScriptedLlm::new("flaky", |req: &CompletionRequest| {
            if req.prompt == "b" {
                Err(LlmError::permanent(PermanentKind::ClientError(400), "bad"))
            } else {
                Ok(req.prompt.clone())
            }
        });
        let reqs: Vec<_> = ["a", "b", "c"].iter().map(|p| CompletionRequest::new(*p)).collect();
        let out = batch_complete(&backend, &reqs, 3);
        assert!(out.results[0].is_ok());
        assert!(out.results[1].is_err());
        assert!(out.results[2].is_ok());
        assert_eq!(out.failures, 1);
    }

    #[test]
    fn invalid_request_fails_in_slot() {
        let backend = MockLlm::default();
        let out = batch_complete(&backend, &[CompletionRequest::new("")], 1);
        assert!(matches!(out.results[0], Err(LlmError::InvalidRequest(_))));
    }

    #[test]
    fn permanent_kind_display() {
        let err = LlmError::permanent(PermanentKind::Authentication, "401");
        assert!(err.to_string().starts_with("authentication"));
    }
}
