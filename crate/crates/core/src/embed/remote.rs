use std::time::Duration;

use serde_json::json;

use super::{EmbedError, EmbeddingVector, Encoder};
use crate::llm::transport::{endpoint, HttpTransport, RetryPolicy};
use crate::llm::{LlmError, PermanentKind};

/// Settings for an OpenAI-compatible embeddings endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    /// Expected vector dimension; responses of another size are rejected.
    pub dim: usize,
    pub batch_size: usize,
    pub timeout: Duration,
    pub min_interval: Duration,
    pub retry: RetryPolicy,
}

impl EmbeddingConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, dim: usize) -> Self {
        EmbeddingConfig {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            dim,
            batch_size: 64,
            timeout: Duration::from_secs(60),
            min_interval: Duration::from_millis(250),
            retry: RetryPolicy::default(),
        }
    }
}

/// Remote encoder: posts `{"model", "input": [texts]}` and reads
/// `data[i].embedding`. Empty texts never leave the process.
#[derive(Debug)]
pub struct EmbeddingClient {
    name: String,
    base_url: String,
    model: String,
    dim: usize,
    batch_size: usize,
    transport: HttpTransport,
}

impl EmbeddingClient {
    pub fn new(config: EmbeddingConfig) -> Result<Self, EmbedError> {
        if config.dim == 0 || config.batch_size == 0 {
            return Err(EmbedError::Config("dim and batch_size must be > 0".into()));
        }
        let transport = HttpTransport::new(
            config.timeout,
            config.api_key,
            config.retry,
            config.min_interval,
        )?;
        Ok(EmbeddingClient {
            name: format!("remote:{}-m{}", config.model, config.dim),
            base_url: config.base_url,
            model: config.model,
            dim: config.dim,
            batch_size: config.batch_size,
            transport,
        })
    }

    fn fetch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let body = json!({"model": self.model, "input": texts});
        let (resp, _) = self
            .transport
            .post_json(&endpoint(&self.base_url, "embeddings"), &body)?;
        let data = resp
            .get("data")
            .and_then(|d| d.as_array())
            .ok_or_else(|| LlmError::permanent(PermanentKind::Decode, "missing data array"))?;
        if data.len() != texts.len() {
            return Err(LlmError::permanent(
                PermanentKind::Decode,
                format!("asked for {} embeddings, got {}", texts.len(), data.len()),
            )
            .into());
        }
        data.iter()
            .map(|item| {
                let values: Vec<f64> = item
                    .get("embedding")
                    .and_then(|e| e.as_array())
                    .ok_or_else(|| LlmError::permanent(PermanentKind::Decode, "missing embedding"))?
                    .iter()
                    .map(|x| x.as_f64().unwrap_or(f64::NAN))
                    .collect();
                if values.len() != self.dim {
                    return Err(EmbedError::DimensionMismatch {
                        expected: self.dim,
                        found: values.len(),
                    });
                }
                if values.iter().any(|x| !x.is_finite()) {
                    return Err(LlmError::permanent(PermanentKind::Decode, "non-finite embedding").into());
                }
                Ok(EmbeddingVector::normalized(values))
            })
            .collect()
    }
}

impl Encoder for EmbeddingClient {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        Ok(self.encode_batch(&[text.to_string()])?.remove(0))
    }

    fn encode_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let mut out = vec![EmbeddingVector::zero(self.dim); texts.len()];
        let pending: Vec<usize> = (0..texts.len())
            .filter(|&i| !texts[i].trim().is_empty())
            .collect();
        for chunk in pending.chunks(self.batch_size) {
            let batch: Vec<&str> = chunk.iter().map(|&i| texts[i].as_str()).collect();
            for (&i, v) in chunk.iter().zip(self.fetch(&batch)?) {
                out[i] = v;
            }
        }
        Ok(out)
    }
}
