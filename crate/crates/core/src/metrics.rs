//! Tag-system quality metrics: popularity, tags per item, intra-item
//! redundancy and uniformity. Similarity counts as redundant at `>=`
//! threshold everywhere.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::builder::{TagRecord, TagSystem};
use crate::corpus::Entity;
use crate::embed::{EmbedError, EmbeddingMatrix, Encoder};
use crate::exec::{self, Execution};
use crate::tagger::AssignmentLine;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("threshold {0} outside (0, 1]")]
    Threshold(f64),
    #[error("encoder: {0}")]
    Embed(#[from] EmbedError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn check_threshold(threshold: f64) -> Result<(), MetricsError> {
    if threshold > 0.0 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(MetricsError::Threshold(threshold))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: BTreeMap<u64, u64>,
    pub total: u64,
}

impl Histogram {
    pub fn from_values(values: impl IntoIterator<Item = u64>) -> Self {
        let mut h = Histogram::default();
        for v in values {
            *h.bins.entry(v).or_insert(0) += 1;
            h.total += 1;
        }
        h
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,count\n");
        for (bin, count) in &self.bins {
            out.push_str(&format!("{bin},{count}\n"));
        }
        out
    }
}

/// Tags carried by one item, de-duplicated in first-seen order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemTags {
    pub id: String,
    pub tags: Vec<String>,
}

impl ItemTags {
    pub fn new(id: impl Into<String>, tags: impl IntoIterator<Item = impl Into<String>>) -> Self {
        let mut seen = BTreeSet::new();
        let tags = tags
            .into_iter()
            .map(Into::into)
            .filter(|t: &String| seen.insert(t.clone()))
            .collect();
        ItemTags { id: id.into(), tags }
    }

    /// Assigned tags of each line; failed lines count as items with no tags.
    pub fn from_assignments(lines: &[AssignmentLine]) -> Vec<ItemTags> {
        lines
            .iter()
            .map(|l| ItemTags::new(l.id.clone(), l.tags.iter().map(|a| a.tag.clone())))
            .collect()
    }

    /// Human tags of each entity that has them.
    pub fn from_ground_truth(entities: &[Entity]) -> Vec<ItemTags> {
        entities
            .iter()
            .filter_map(|e| {
                e.ground_truth_tags
                    .as_ref()
                    .map(|t| ItemTags::new(e.id.clone(), t.iter().cloned()))
            })
            .collect()
    }
}

/// A ratio together with the reason it fell back to its default.
#[derive(Debug, Clone, PartialEq)]
pub struct Ratio {
    pub value: f64,
    pub diagnostic: Option<String>,
}

/// Bin `f` counts records with frequency `f`.
pub fn popularity_histogram(ts: &TagSystem) -> Histogram {
    Histogram::from_values(ts.records().iter().map(|r| r.frequency as u64))
}

/// Bin `t` counts items carrying `t` tags, zero included.
pub fn tags_per_item_histogram(items: &[ItemTags]) -> Histogram {
    Histogram::from_values(items.iter().map(|i| i.tags.len() as u64))
}

fn redundant_pairs(exec: Execution, matrix: &EmbeddingMatrix, rows: &[usize], threshold: f64) -> u64 {
    let n = rows.len();
    exec::map_range(exec, n, |a| {
        (a + 1..n)
            .filter(|&b| matrix.cosine_between(rows[a], matrix, rows[b]) >= threshold)
            .count() as u64
    })
    .into_iter()
    .sum()
}

/// Mean, over items with at least two tags, of the share of their tag
/// pairs at or above `threshold`.
pub fn intra_item_redundancy<E: Encoder + ?Sized>(
    items: &[ItemTags],
    encoder: &E,
    threshold: f64,
) -> Result<Ratio, MetricsError> {
    intra_item_redundancy_with(Execution::default(), items, encoder, threshold)
}

pub fn intra_item_redundancy_with<E: Encoder + ?Sized>(
    exec: Execution,
    items: &[ItemTags],
    encoder: &E,
    threshold: f64,
) -> Result<Ratio, MetricsError> {
    check_threshold(threshold)?;
    let eligible: Vec<&ItemTags> = items.iter().filter(|i| i.tags.len() >= 2).collect();
    if eligible.is_empty() {
        return Ok(Ratio {
            value: 0.0,
            diagnostic: Some("no item carries two or more tags".into()),
        });
    }
    let vocab: Vec<String> = eligible
        .iter()
        .flat_map(|i| i.tags.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let matrix = EmbeddingMatrix::encode(encoder, vocab)?;
    let index: HashMap<&str, usize> = matrix
        .keys()
        .iter()
        .enumerate()
        .map(|(i, k)| (k.as_str(), i))
        .collect();
    let ratios = exec::map(exec, &eligible, |item| {
        let rows: Vec<usize> = item.tags.iter().map(|t| index[t.as_str()]).collect();
        let t = rows.len() as u64;
        let pairs = t * (t - 1) / 2;
        redundant_pairs(Execution::Sequential, &matrix, &rows, threshold) as f64 / pairs as f64
    });
    Ok(Ratio {
        value: ratios.iter().sum::<f64>() / ratios.len() as f64,
        diagnostic: None,
    })
}

/// Share of all unordered tag pairs in the system at or above `threshold`.
/// Stored embeddings are used when present.
pub fn uniformity<E: Encoder + ?Sized>(
    ts: &TagSystem,
    encoder: &E,
    threshold: f64,
) -> Result<Ratio, MetricsError> {
    uniformity_with(Execution::default(), ts, encoder, threshold)
}

pub fn uniformity_with<E: Encoder + ?Sized>(
    exec: Execution,
    ts: &TagSystem,
    encoder: &E,
    threshold: f64,
) -> Result<Ratio, MetricsError> {
    check_threshold(threshold)?;
    if ts.len() < 2 {
        return Ok(Ratio {
            value: 0.0,
            diagnostic: Some(format!("tag system has {} tag(s); need at least 2", ts.len())),
        });
    }
    let matrix = ts.embedding_matrix(encoder)?;
    let rows: Vec<usize> = (0..matrix.len()).collect();
    let t = rows.len() as u64;
    let hits = redundant_pairs(exec, &matrix, &rows, threshold);
    Ok(Ratio {
        value: hits as f64 / (t * (t - 1) / 2) as f64,
        diagnostic: None,
    })
}

/// A tag system over human tags: one record per distinct tag, frequency =
/// number of items carrying it, no stored embeddings.
pub fn tag_system_from_items(items: &[ItemTags], encoder_name: &str) -> TagSystem {
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for item in items {
        for tag in &item.tags {
            *freq.entry(tag).or_insert(0) += 1;
        }
    }
    let records = freq
        .into_iter()
        .map(|(tag, frequency)| TagRecord {
            tag: tag.to_string(),
            frequency,
            aliases: Vec::new(),
            embedding: None,
        })
        .collect();
    TagSystem::new(records, 0.0, encoder_name)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// "assignments", "ground_truth" or "tag_system".
    pub source: String,
    pub tag_system_encoder: String,
    pub encoder: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub popularity: Histogram,
    pub tags_per_item: Histogram,
    pub intra_item_redundancy: f64,
    pub uniformity: f64,
    pub tag_count: usize,
    pub threshold: f64,
    pub provenance: Provenance,
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

/// Computes every metric. `items` may be empty when only the system is
/// being evaluated.
pub fn compute_report<E: Encoder + ?Sized>(
    ts: &TagSystem,
    items: &[ItemTags],
    encoder: &E,
    threshold: f64,
    provenance: Provenance,
) -> Result<MetricsReport, MetricsError> {
    let mut diagnostics = Vec::new();
    if let Some(w) = ts.provenance_warning(encoder.name()) {
        diagnostics.push(w);
    }
    let redundancy = intra_item_redundancy(items, encoder, threshold)?;
    let uni = uniformity(ts, encoder, threshold)?;
    diagnostics.extend(redundancy.diagnostic.clone());
    diagnostics.extend(uni.diagnostic.clone());
    Ok(MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        popularity: popularity_histogram(ts),
        tags_per_item: tags_per_item_histogram(items),
        intra_item_redundancy: redundancy.value,
        uniformity: uni.value,
        tag_count: ts.len(),
        threshold,
        provenance,
        diagnostics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    /// `<stem>.popularity.csv` and `<stem>.tags_per_item.csv` next to `path`.
    CsvHistograms,
}

/// Writes the report and returns the files written.
pub fn emit_report(
    report: &MetricsReport,
    path: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<Vec<PathBuf>, MetricsError> {
    let path = path.as_ref();
    let write = |p: &Path, body: &[u8]| {
        std::fs::write(p, body).map_err(|source| MetricsError::Io {
            path: p.display().to_string(),
            source,
        })
    };
    match format {
        ReportFormat::Json => {
            let mut body = serde_json::to_vec_pretty(report).expect("report serializes");
            body.push(b'\n');
            write(path, &body)?;
            Ok(vec![path.to_path_buf()])
        }
        ReportFormat::CsvHistograms => {
            let stem = path.with_extension("");
            let mut written = Vec::new();
            for (name, h) in [
                ("popularity", &report.popularity),
                ("tags_per_item", &report.tags_per_item),
            ] {
                let p = PathBuf::from(format!("{}.{name}.csv", stem.display()));
                write(&p, h.to_csv().as_bytes())?;
                written.push(p);
            }
            Ok(written)
        }
    }
}

pub fn read_report(path: impl AsRef<Path>) -> Result<MetricsReport, String> {
    let bytes = std::fs::read(path.as_ref()).map_err(|e| e.to_string())?;
    serde_json::from_slice(&bytes).map_err(|e| e.to_string())
}
