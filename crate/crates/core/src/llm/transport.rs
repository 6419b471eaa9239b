//! HTTP plumbing shared by the remote chat and embedding clients:
//! retries with exponential backoff and a contention-safe rate limiter.

use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use rand::Rng;
use serde_json::Value;

use super::{LlmError, PermanentKind};

/// Retry schedule: attempt `k` (0-based) that fails with a retriable error
/// waits `base_delay * 2^k`, plus up to 10% jitter unless `deterministic`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub deterministic: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            base_delay: Duration::from_secs(1),
            deterministic: false,
        }
    }
}

impl RetryPolicy {
    /// Delay before the retry that follows failed attempt `attempt` (0-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let base = self.base_delay.saturating_mul(1u32 << attempt.min(16));
        if self.deterministic || base.is_zero() {
            return base;
        }
        let jitter = rand::thread_rng().gen_range(0.0..0.1);
        base + base.mul_f64(jitter)
    }
}

/// Token bucket of capacity one: callers are spaced at least `interval`
/// apart. Waiting happens outside the lock.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next_slot: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(interval: Duration) -> Self {
        RateLimiter {
            interval,
            next_slot: Mutex::new(None),
        }
    }

    pub fn interval(&self) -> Duration {
        self.interval
    }

    /// Blocks until the caller may issue a request.
    pub fn acquire(&self) {
        if self.interval.is_zero() {
            return;
        }
        let wait = {
            let mut slot = self.next_slot.lock().unwrap_or_else(|e| e.into_inner());
            let now = Instant::now();
            let start = match *slot {
                Some(at) if at > now => at,
                _ => now,
            };
            *slot = Some(start + self.interval);
            start - now
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }
}

enum Attempt {
    Done(Value),
    Retry(String),
    Fail(LlmError),
}

/// JSON-over-HTTP POST with bearer auth, retries and rate limiting.
#[derive(Debug)]
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    api_key: Option<String>,
    policy: RetryPolicy,
    limiter: RateLimiter,
}

impl HttpTransport {
    pub fn new(
        timeout: Duration,
        api_key: Option<String>,
        policy: RetryPolicy,
        min_interval: Duration,
    ) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::permanent(PermanentKind::Config, e.to_string()))?;
        Ok(HttpTransport {
            client,
            api_key,
            policy,
            limiter: RateLimiter::new(min_interval),
        })
    }

    pub fn policy(&self) -> &RetryPolicy {
        &self.policy
    }

    fn attempt(&self, url: &str, body: &Value) -> Attempt {
        self.limiter.acquire();
        let mut req = self.client.post(url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(resp) => resp,
            Err(e) => return Attempt::Retry(format!("transport: {e}")),
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(format!("reading body: {e}")),
        };
        if status.as_u16() == 429 || status.is_server_error() {
            return Attempt::Retry(format!("HTTP {status}"));
        }
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Attempt::Fail(LlmError::permanent(
                PermanentKind::Authentication,
                format!("HTTP {status}"),
            ));
        }
        if !status.is_success() {
            return Attempt::Fail(LlmError::permanent(
                PermanentKind::ClientError(status.as_u16()),
                truncate_for_log(&text),
            ));
        }
        if text.trim().is_empty() {
            return Attempt::Fail(LlmError::permanent(PermanentKind::EmptyBody, "empty response body"));
        }
        match serde_json::from_str(&text) {
            Ok(v) => Attempt::Done(v),
            Err(e) => Attempt::Fail(LlmError::permanent(PermanentKind::Decode, e.to_string())),
        }
    }

    /// Posts `body` to `url`, returning the decoded JSON response and the
    /// number of attempts used.
    pub fn post_json(&self, url: &str, body: &Value) -> Result<(Value, u32), LlmError> {
        let max = self.policy.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 0..max {
            match self.attempt(url, body) {
                Attempt::Done(v) => return Ok((v, attempt + 1)),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(msg) => {
                    log::debug!("attempt {} to {url} failed: {msg}", attempt + 1);
                    last = msg;
                    if attempt + 1 < max {
                        thread::sleep(self.policy.delay(attempt));
                    }
                }
            }
        }
        Err(LlmError::Retriable {
            attempts: max,
            message: last,
        })
    }
}

fn truncate_for_log(text: &str) -> String {
    text.chars().take(200).collect()
}

/// Joins a base URL and an endpoint path with exactly one slash.
pub fn endpoint(base_url: &str, path: &str) -> String {
    format!("{}/{}", base_url.trim_end_matches('/'), path.trim_start_matches('/'))
}
