//! The constructed tag system and its on-disk format.
//!
//! A tag-system file is one compact JSON object:
//!
//! ```text
//! {"format_version":1,"fusion_threshold":0.8,"encoder_name":"...",
//!  "manifest":{...},"checksum":"sha256:<hex>","records":[{tag,frequency,aliases,embedding?}, ...]}
//! ```
//!
//! `checksum` covers the compact serialization of `records`. A file cut
//! short is reported as a checksum failure.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed::{EmbedError, EmbeddingMatrix, EmbeddingVector, Encoder};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("tag system format: {0}")]
    Format(String),
    #[error("unsupported tag system format version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("tag system checksum failure: {0}")]
    Checksum(String),
}

/// One canonical tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagRecord {
    pub tag: String,
    /// Distinct entities that emitted this tag or any alias.
    pub frequency: usize,
    /// Surface forms merged into this record, sorted.
    #[serde(default)]
    pub aliases: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingVector>,
}

/// Provenance of a build.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildManifest {
    pub corpus_hash: String,
    pub entity_count: usize,
    pub template_ids: Vec<String>,
    pub llm_backend: String,
    pub encoder_backend: String,
    pub min_freq: usize,
    pub max_freq: Option<usize>,
    pub raw_tag_count: usize,
    pub truncated_tag_count: usize,
    pub failed_completions: usize,
    /// Seconds since the Unix epoch; 0 under a fixed clock.
    pub created_unix_s: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagSystem {
    records: Vec<TagRecord>,
    pub fusion_threshold: f64,
    pub encoder_name: String,
    pub manifest: BuildManifest,
}

impl TagSystem {
    /// Sorts records by frequency descending, then tag ascending.
    pub fn new(
        mut records: Vec<TagRecord>,
        fusion_threshold: f64,
        encoder_name: impl Into<String>,
    ) -> Self {
        records.sort_by(|a, b| b.frequency.cmp(&a.frequency).then_with(|| a.tag.cmp(&b.tag)));
        TagSystem {
            records,
            fusion_threshold,
            encoder_name: encoder_name.into(),
            manifest: BuildManifest::default(),
        }
    }

    pub fn records(&self) -> &[TagRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.tag.as_str())
    }

    pub fn get(&self, tag: &str) -> Option<&TagRecord> {
        self.records.iter().find(|r| r.tag == tag)
    }

    /// Maps every canonical tag and alias to its canonical tag.
    pub fn surface_index(&self) -> HashMap<&str, &str> {
        let mut index = HashMap::new();
        for r in &self.records {
            for alias in &r.aliases {
                index.insert(alias.as_str(), r.tag.as_str());
            }
        }
        for r in &self.records {
            index.insert(r.tag.as_str(), r.tag.as_str());
        }
        index
    }

    /// Canonical tags as an embedding matrix, using stored embeddings and
    /// encoding only the records that lack one.
    pub fn embedding_matrix<E: Encoder + ?Sized>(
        &self,
        encoder: &E,
    ) -> Result<EmbeddingMatrix, EmbedError> {
        let missing: Vec<String> = self
            .records
            .iter()
            .filter(|r| r.embedding.is_none())
            .map(|r| r.tag.clone())
            .collect();
        let mut fresh = encoder.encode_batch(&missing)?.into_iter();
        let rows = self
            .records
            .iter()
            .map(|r| match &r.embedding {
                Some(v) => v.clone(),
                None => fresh.next().expect("one fresh vector per missing record"),
            })
            .collect();
        EmbeddingMatrix::new(self.records.iter().map(|r| r.tag.clone()).collect(), rows)
    }

    /// A warning when this system's embeddings came from another encoder.
    pub fn provenance_warning(&self, encoder_name: &str) -> Option<String> {
        (self.encoder_name != encoder_name).then(|| {
            format!(
                "embedding provenance mismatch: built with {:?}, now using {:?}",
                self.encoder_name, encoder_name
            )
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let file = FileRef {
            format_version: FORMAT_VERSION,
            fusion_threshold: self.fusion_threshold,
            encoder_name: &self.encoder_name,
            manifest: &self.manifest,
            checksum: checksum(&self.records),
            records: &self.records,
        };
        let mut bytes = serde_json::to_vec(&file).expect("tag system serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let file: FileOwned = serde_json::from_slice(bytes).map_err(|e| {
            if e.is_eof() {
                StoreError::Checksum(format!("file is truncated ({e})"))
            } else {
                StoreError::Format(e.to_string())
            }
        })?;
        if file.format_version != FORMAT_VERSION {
            return Err(StoreError::Version {
                found: file.format_version,
            });
        }
        let actual = checksum(&file.records);
        if actual != file.checksum {
            return Err(StoreError::Checksum(format!(
                "expected {}, computed {actual}",
                file.checksum
            )));
        }
        Ok(TagSystem {
            records: file.records,
            fusion_threshold: file.fusion_threshold,
            encoder_name: file.encoder_name,
            manifest: file.manifest,
        })
    }
}

fn checksum(records: &[TagRecord]) -> String {
    let bytes = serde_json::to_vec(records).expect("records serialize");
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}

#[derive(Serialize)]
struct FileRef<'a> {
    format_version: u32,
    fusion_threshold: f64,
    encoder_name: &'a str,
    manifest: &'a BuildManifest,
    checksum: String,
    records: &'a [TagRecord],
}

#[derive(Deserialize)]
struct FileOwned {
    format_version: u32,
    fusion_threshold: f64,
    encoder_name: String,
    #[serde(default)]
    manifest: BuildManifest,
    checksum: String,
    records: Vec<TagRecord>,
}

pub fn save_tag_system(system: &TagSystem, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let path = path.as_ref();
    std::fs::write(path, system.to_bytes()).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_tag_system(path: impl AsRef<Path>) -> Result<TagSystem, StoreError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })?;
    TagSystem::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashingEncoder;

    fn sample() -> TagSystem {
        let enc = HashingEncoder::new(16).unwrap();
        let mut ts = TagSystem::new(
            vec![
                TagRecord {
                    tag: "pasta".into(),
                    frequency: 3,
                    aliases: vec!["pastas".into()],
                    embedding: Some(enc.encode("pasta").unwrap()),
                },
                TagRecord {
                    tag: "baking".into(),
                    frequency: 5,
                    aliases: vec![],
                    embedding: Some(enc.encode("baking").unwrap()),
                },
            ],
            0.8,
            enc.name(),
        );
        ts.manifest.corpus_hash = "abc".into();
        ts.manifest.template_ids = vec!["gen.txt".into()];
        ts
    }

    #[test]
    fn records_sorted_by_frequency_then_tag() {
        let ts = sample();
        assert_eq!(ts.tags().collect::<Vec<_>>(), ["baking", "pasta"]);
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ts.json");
        let ts = sample();
        save_tag_system(&ts, &path).unwrap();
        assert_eq!(load_tag_system(&path).unwrap(), ts);
    }

    #[test]
    fn truncated_file_is_checksum_error() {
        let bytes = sample().to_bytes();
        let cut = &bytes[..bytes.len() / 2];
        assert!(matches!(TagSystem::from_bytes(cut), Err(StoreError::Checksum(_))));
    }

    #[test]
    fn tampered_records_fail_checksum() {
        let text = String::from_utf8(sample().to_bytes()).unwrap();
        let tampered = text.replace("\"frequency\":5", "\"frequency\":6");
        assert!(matches!(
            TagSystem::from_bytes(tampered.as_bytes()),
            Err(StoreError::Checksum(_))
        ));
    }

    #[test]
    fn version_mismatch() {
        let text = String::from_utf8(sample().to_bytes()).unwrap();
        let bumped = text.replace("\"format_version\":1", "\"format_version\":2");
        assert!(matches!(
            TagSystem::from_bytes(bumped.as_bytes()),
            Err(StoreError::Version { found: 2 })
        ));
    }

    #[test]
    fn provenance_warning() {
        let ts = sample();
        assert!(ts.provenance_warning(&ts.encoder_name.clone()).is_none());
        let w = ts.provenance_warning("other").unwrap();
        assert!(w.contains("embedding provenance mismatch"));
    }

    #[test]
    fn surface_index_maps_aliases() {
        let ts = sample();
        let idx = ts.surface_index();
        assert_eq!(idx["pastas"], "pasta");
        assert_eq!(idx["pasta"], "pasta");
        assert!(!idx.contains_key("rice"));
    }

    #[test]
    fn embedding_matrix_fills_missing() {
        let enc = HashingEncoder::new(16).unwrap();
        let ts = TagSystem::new(
            vec![TagRecord {
                tag: "rice".into(),
                frequency: 1,
                aliases: vec![],
                embedding: None,
            }],
            0.8,
            enc.name(),
        );
        let m = ts.embedding_matrix(&enc).unwrap();
        assert_eq!(m.row(0), &enc.encode("rice").unwrap());
    }
}
