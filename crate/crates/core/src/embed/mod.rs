//! Text encoders, cosine similarity, the tag/candidate matching matrix and
//! exact top-k retrieval.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::exec::{self, Execution};
use crate::llm::LlmError;

mod cache;
mod hashing;
mod remote;

pub use cache::CachedEncoder;
pub use hashing::{fnv1a64, HashingEncoder, DEFAULT_DIM};
pub use remote::{EmbeddingClient, EmbeddingConfig};

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid encoder configuration: {0}")]
    Config(String),
    #[error("encoder backend: {0}")]
    Backend(#[from] LlmError),
    #[error("embedding cache: {0}")]
    Cache(String),
}

/// A dense vector. Vectors produced by encoders are unit length, or all
/// zeros for empty text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Wraps raw values without normalizing them.
    pub fn from_raw(values: Vec<f64>) -> Self {
        EmbeddingVector(values)
    }

    /// L2-normalizes `values`; an all-zero input stays all-zero.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let norm = l2(&values);
        if norm > 0.0 && norm.is_finite() {
            values.iter_mut().for_each(|x| *x /= norm);
        } else {
            values.iter_mut().for_each(|x| *x = 0.0);
        }
        EmbeddingVector(values)
    }

    /// The empty-text sentinel.
    pub fn zero(dim: usize) -> Self {
        EmbeddingVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        l2(&self.0)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        EmbeddingVector(self.0.iter().map(|x| x * factor).collect())
    }
}

fn l2(values: &[f64]) -> f64 {
    values.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cosine_with_norms(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Cosine similarity, clamped to `[-1, 1]`. Zero vectors score 0.
pub fn cosine(v: &EmbeddingVector, w: &EmbeddingVector) -> Result<f64, EmbedError> {
    if v.dim() != w.dim() {
        return Err(EmbedError::DimensionMismatch {
            expected: v.dim(),
            found: w.dim(),
        });
    }
    Ok(cosine_with_norms(&v.0, &w.0, v.norm(), w.norm()))
}

/// Keyed rows of equal dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    keys: Vec<String>,
    rows: Vec<EmbeddingVector>,
    norms: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(keys: Vec<String>, rows: Vec<EmbeddingVector>) -> Result<Self, EmbedError> {
        if keys.len() != rows.len() {
            return Err(EmbedError::Config(format!(
                "{} keys for {} rows",
                keys.len(),
                rows.len()
            )));
        }
        let dim = rows.first().map_or(0, EmbeddingVector::dim);
        if let Some(bad) = rows.iter().find(|r| r.dim() != dim) {
            return Err(EmbedError::DimensionMismatch {
                expected: dim,
                found: bad.dim(),
            });
        }
        let norms = rows.iter().map(EmbeddingVector::norm).collect();
        Ok(EmbeddingMatrix {
            dim,
            keys,
            rows,
            norms,
        })
    }

    /// Encodes `keys` with `encoder` to build the matrix.
    pub fn encode<E: Encoder + ?Sized>(encoder: &E, keys: Vec<String>) -> Result<Self, EmbedError> {
        let rows = encoder.encode_batch(&keys)?;
        EmbeddingMatrix::new(keys, rows)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn rows(&self) -> &[EmbeddingVector] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &EmbeddingVector {
        &self.rows[i]
    }

    /// Cosine between row `i` of `self` and row `j` of `other`.
    pub fn cosine_between(&self, i: usize, other: &EmbeddingMatrix, j: usize) -> f64 {
        cosine_with_norms(&self.rows[i].0, &other.rows[j].0, self.norms[i], other.norms[j])
    }

    /// Scores every row against `query`.
    pub fn scores(&self, query: &EmbeddingVector) -> Result<Vec<f64>, EmbedError> {
        if !self.is_empty() && query.dim() != self.dim {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dim,
                found: query.dim(),
            });
        }
        let qn = query.norm();
        Ok(self
            .rows
            .iter()
            .zip(&self.norms)
            .map(|(r, &n)| cosine_with_norms(&r.0, &query.0, n, qn))
            .collect())
    }
}

/// Row-major `rows × cols` cosine scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    scores: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scores[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> SimilarityMatrix {
        let mut scores = vec![0.0; self.scores.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                scores[j * self.rows + i] = self.get(i, j);
            }
        }
        SimilarityMatrix {
            rows: self.cols,
            cols: self.rows,
            scores,
        }
    }

    /// For column `j`, the row with the highest score. Ties go to the
    /// lowest row index.
    pub fn argmax_in_column(&self, j: usize) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.rows {
            let s = self.get(i, j);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        best
    }
}

/// The matching score matrix: entry `(i, j)` is the cosine between tag row
/// `i` and candidate row `j`.
pub fn similarity_matrix(
    tags: &EmbeddingMatrix,
    cands: &EmbeddingMatrix,
) -> Result<SimilarityMatrix, EmbedError> {
    similarity_matrix_with(Execution::Parallel, tags, cands)
}

/// [`similarity_matrix`] with an explicit execution strategy.
pub fn similarity_matrix_with(
    exec: Execution,
    tags: &EmbeddingMatrix,
    cands: &EmbeddingMatrix,
) -> Result<SimilarityMatrix, EmbedError> {
    if !tags.is_empty() && !cands.is_empty() && tags.dim != cands.dim {
        return Err(EmbedError::DimensionMismatch {
            expected: tags.dim,
            found: cands.dim,
        });
    }
    let (rows, cols) = (tags.len(), cands.len());
    let per_row = exec::map_range(exec, rows, |i| {
        (0..cols)
            .map(|j| tags.cosine_between(i, cands, j))
            .collect::<Vec<f64>>()
    });
    Ok(SimilarityMatrix {
        rows,
        cols,
        scores: per_row.concat(),
    })
}

/// Orders `(key, score)` by score descending, then key ascending.
pub fn rank_order(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// The `k` best rows scoring at least `floor`, by score then key.
pub fn top_k(
    query: &EmbeddingVector,
    tags: &EmbeddingMatrix,
    k: usize,
    floor: f64,
) -> Result<Vec<(String, f64)>, EmbedError> {
    let scores = tags.scores(query)?;
    let mut hits: Vec<(String, f64)> = tags
        .keys
        .iter()
        .zip(scores)
        .filter(|(_, s)| *s >= floor)
        .map(|(key, s)| (key.clone(), s))
        .collect();
    hits.sort_by(rank_order);
    hits.truncate(k);
    Ok(hits)
}

/// A text encoder. Non-empty text maps to a unit vector; empty or
/// whitespace-only text maps to the zero sentinel.
pub trait Encoder: Send + Sync {
    /// Identifies the backend and its configuration; recorded in manifests.
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn encode(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;

    fn encode_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        exec::map(Execution::Parallel, texts, |t| self.encode(t))
            .into_iter()
            .collect()
    }
}

impl<T: Encoder + ?Sized> Encoder for Box<T> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        (**self).encode(text)
    }

    fn encode_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        (**self).encode_batch(texts)
    }
}

impl<T: Encoder + ?Sized> Encoder for std::sync::Arc<T> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        (**self).encode(text)
    }

    fn encode_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        (**self).encode_batch(texts)
    }
}
