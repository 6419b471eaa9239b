use std::time::{Duration, Instant};

use serde_json::json;

use super::transport::{endpoint, HttpTransport, RetryPolicy};
use super::{CompletionRequest, CompletionResult, LlmBackend, LlmError, PermanentKind};

/// Settings for an OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    /// Minimum spacing between requests across all workers.
    pub min_interval: Duration,
    pub retry: RetryPolicy,
}

impl ChatConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        ChatConfig {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            timeout: Duration::from_secs(60),
            min_interval: Duration::from_millis(250),
            retry: RetryPolicy::default(),
        }
    }
}

/// Chat-completions client. Sends the prompt as a single user message and
/// reads `choices[0].message.content`.
#[derive(Debug)]
pub struct ChatClient {
    name: String,
    base_url: String,
    model: String,
    transport: HttpTransport,
}

impl ChatClient {
    pub fn new(config: ChatConfig) -> Result<Self, LlmError> {
        let transport = HttpTransport::new(
            config.timeout,
            config.api_key,
            config.retry,
            config.min_interval,
        )?;
        Ok(ChatClient {
            name: format!("chat:{}", config.model),
            base_url: config.base_url,
            model: config.model,
            transport,
        })
    }
}

impl LlmBackend for ChatClient {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        request.validate()?;
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
        });
        let started = Instant::now();
        let (resp, attempts) = self
            .transport
            .post_json(&endpoint(&self.base_url, "chat/completions"), &body)?;
        let content = resp
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .unwrap_or_default();
        if content.trim().is_empty() {
            return Err(LlmError::permanent(
                PermanentKind::EmptyBody,
                "no content at choices[0].message.content",
            ));
        }
        Ok(CompletionResult {
            text: content.chars().take(request.max_output_chars).collect(),
            backend_name: self.name.clone(),
            latency_ms: started.elapsed().as_millis() as u64,
            attempt_count: attempts,
        })
    }
}
