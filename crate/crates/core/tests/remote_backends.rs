use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use tagkit_core::embed::{EmbedError, EmbeddingClient, EmbeddingConfig};
use tagkit_core::llm::transport::RetryPolicy;
use tagkit_core::llm::{
    ChatClient, ChatConfig, CompletionRequest, LlmBackend, LlmError, PermanentKind, RateLimiter,
};
use tagkit_core::Encoder;

/// Minimal HTTP/1.1 stub: answers the n-th request with the n-th scripted
/// response (the last one repeats) and records request bodies.
struct Stub {
    base_url: String,
    bodies: Arc<Mutex<Vec<Value>>>,
}

fn stub(script: Vec<(u16, String)>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base_url = format!("http://{}/v1", listener.local_addr().unwrap());
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let seen = Arc::clone(&bodies);
    thread::spawn(move || {
        for (n, stream) in listener.incoming().enumerate() {
            let Ok(mut stream) = stream else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap_or(0);
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            seen.lock()
                .unwrap()
                .push(serde_json::from_slice(&body).unwrap_or(Value::Null));
            let (status, text) = &script[n.min(script.len() - 1)];
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            );
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    Stub { base_url, bodies }
}

fn fast_retry(max_attempts: u32) -> RetryPolicy {
    RetryPolicy {
        max_attempts,
        base_delay: Duration::from_millis(5),
        deterministic: true,
    }
}

fn chat(base_url: &str, max_attempts: u32) -> ChatClient {
    let mut cfg = ChatConfig::new(base_url, "test-model");
    cfg.api_key = Some("sk-test".into());
    cfg.min_interval = Duration::ZERO;
    cfg.timeout = Duration::from_secs(5);
    cfg.retry = fast_retry(max_attempts);
    ChatClient::new(cfg).unwrap()
}

fn chat_body(content: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

#[test]
fn chat_retries_rate_limits_then_succeeds() {
    let s = stub(vec![
        (429, "{}".into()),
        (429, "{}".into()),
        (200, chat_body("pasta, baking")),
    ]);
    let client = chat(&s.base_url, 4);
    let result = client.complete(&CompletionRequest::new("hello")).unwrap();
    assert_eq!(result.text, "pasta, baking");
    assert_eq!(result.attempt_count, 3);
    assert_eq!(result.backend_name, "chat:test-model");

    let bodies = s.bodies.lock().unwrap();
    assert_eq!(bodies.len(), 3);
    assert_eq!(bodies[0]["model"], "test-model");
    assert_eq!(bodies[0]["messages"][0]["role"], "user");
    assert_eq!(bodies[0]["messages"][0]["content"], "hello");
}

#[test]
fn chat_authentication_failure_is_permanent() {
    let s = stub(vec![(401, r#"{"error":"bad key"}"#.into())]);
    let err = chat(&s.base_url, 4)
        .complete(&CompletionRequest::new("hello"))
        .unwrap_err();
    assert!(matches!(
        err,
        LlmError::Permanent {
            kind: PermanentKind::Authentication,
            ..
        }
    ));
    assert!(err.to_string().contains("authentication"));
    assert_eq!(s.bodies.lock().unwrap().len(), 1);
}

#[test]
fn chat_server_errors_exhaust_attempts() {
    let s = stub(vec![(500, "{}".into())]);
    let err = chat(&s.base_url, 3)
        .complete(&CompletionRequest::new("hello"))
        .unwrap_err();
    assert!(matches!(err, LlmError::Retriable { attempts: 3, .. }));
    assert_eq!(s.bodies.lock().unwrap().len(), 3);
}

#[test]
fn chat_other_client_errors_do_not_retry() {
    let s = stub(vec![(400, r#"{"error":"bad request"}"#.into())]);
    let err = chat(&s.base_url, 4)
        .complete(&CompletionRequest::new("hello"))
        .unwrap_err();
    assert!(matches!(
        err,
        LlmError::Permanent {
            kind: PermanentKind::ClientError(400),
            ..
        }
    ));
    assert_eq!(s.bodies.lock().unwrap().len(), 1);
}

#[test]
fn chat_empty_content_is_permanent() {
    let s = stub(vec![(200, chat_body(""))]);
    let err = chat(&s.base_url, 4)
        .complete(&CompletionRequest::new("hello"))
        .unwrap_err();
    assert!(matches!(
        err,
        LlmError::Permanent {
            kind: PermanentKind::EmptyBody,
            ..
        }
    ));
}

#[test]
fn chat_undecodable_body_is_permanent() {
    let s = stub(vec![(200, "not json".into())]);
    let err = chat(&s.base_url, 4)
        .complete(&CompletionRequest::new("hello"))
        .unwrap_err();
    assert!(matches!(
        err,
        LlmError::Permanent {
            kind: PermanentKind::Decode,
            ..
        }
    ));
}

#[test]
fn unreachable_endpoint_is_retriable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = chat(&format!("http://127.0.0.1:{port}/v1"), 2)
        .complete(&CompletionRequest::new("hello"))
        .unwrap_err();
    assert!(matches!(err, LlmError::Retriable { attempts: 2, .. }));
}

fn embedder(base_url: &str, dim: usize, batch_size: usize) -> EmbeddingClient {
    let mut cfg = EmbeddingConfig::new(base_url, "embed-model", dim);
    cfg.min_interval = Duration::ZERO;
    cfg.batch_size = batch_size;
    cfg.retry = fast_retry(2);
    EmbeddingClient::new(cfg).unwrap()
}

fn embed_body(vectors: &[Vec<f64>]) -> String {
    let data: Vec<Value> = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| json!({"index": i, "embedding": v}))
        .collect();
    json!({ "data": data }).to_string()
}

#[test]
fn embeddings_are_normalized_and_empty_text_skips_the_call() {
    let s = stub(vec![(200, embed_body(&[vec![3.0, 4.0], vec![0.0, 2.0]]))]);
    let enc = embedder(&s.base_url, 2, 8);
    assert_eq!(enc.name(), "remote:embed-model-m2");
    let texts = vec!["alpha".to_string(), "".to_string(), "beta".to_string()];
    let out = enc.encode_batch(&texts).unwrap();
    assert_eq!(out[0].values(), &[0.6, 0.8]);
    assert!(out[1].is_zero());
    assert_eq!(out[2].values(), &[0.0, 1.0]);
    let bodies = s.bodies.lock().unwrap();
    assert_eq!(bodies.len(), 1);
    assert_eq!(bodies[0]["input"], json!(["alpha", "beta"]));
    assert_eq!(bodies[0]["model"], "embed-model");
}

#[test]
fn embedding_dimension_mismatch_is_rejected() {
    let s = stub(vec![(200, embed_body(&[vec![1.0, 0.0, 0.0]]))]);
    let err = embedder(&s.base_url, 2, 8).encode("alpha").unwrap_err();
    assert!(matches!(
        err,
        EmbedError::DimensionMismatch {
            expected: 2,
            found: 3
        }
    ));
}

#[test]
fn embedding_batches_are_split() {
    let s = stub(vec![(200, embed_body(&[vec![1.0, 0.0], vec![0.0, 1.0]]))]);
    let enc = embedder(&s.base_url, 2, 2);
    let texts: Vec<String> = ["a", "b", "c", "d"].iter().map(|t| t.to_string()).collect();
    assert_eq!(enc.encode_batch(&texts).unwrap().len(), 4);
    assert_eq!(s.bodies.lock().unwrap().len(), 2);
}

#[test]
fn rate_limiter_spaces_concurrent_callers() {
    let limiter = Arc::new(RateLimiter::new(Duration::from_millis(20)));
    let start = Instant::now();
    let handles: Vec<_> = (0..5)
        .map(|_| {
            let l = Arc::clone(&limiter);
            thread::spawn(move || l.acquire())
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    // Five slots at 20 ms spacing: the last starts at least 80 ms in.
    assert!(start.elapsed() >= Duration::from_millis(80));
}
