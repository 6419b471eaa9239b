//! Content-addressed, append-only embedding cache.
//!
//! File format (line-delimited JSON):
//!
//! ```text
//! {"format":"tagkit-embedding-cache","version":1}
//! {"key":"<sha256 hex of encoder name, NUL, text>","values":[...]}
//! ...
//! ```
//!
//! Entries whose dimension disagrees with the encoder, and a torn final
//! line, are ignored on load. Deleting the file only costs recomputation.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EmbedError, EmbeddingVector, Encoder};

const FORMAT: &str = "tagkit-embedding-cache";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    values: EmbeddingVector,
}

/// Wraps an encoder with an in-memory map, optionally persisted to disk.
pub struct CachedEncoder<E> {
    inner: E,
    path: Option<PathBuf>,
    memory: Mutex<HashMap<String, EmbeddingVector>>,
    writer: Mutex<Option<BufWriter<File>>>,
}

impl<E: Encoder> CachedEncoder<E> {
    pub fn in_memory(inner: E) -> Self {
        CachedEncoder {
            inner,
            path: None,
            memory: Mutex::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Opens or creates the cache file at `path`.
    pub fn open(inner: E, path: impl AsRef<Path>) -> Result<Self, EmbedError> {
        let path = path.as_ref().to_path_buf();
        let io_err = |e: std::io::Error| EmbedError::Cache(format!("{}: {e}", path.display()));
        let mut memory = HashMap::new();
        let exists = path.exists();
        if exists {
            let mut lines = BufReader::new(File::open(&path).map_err(io_err)?).lines();
            let header: Header = match lines.next() {
                Some(line) => serde_json::from_str(&line.map_err(io_err)?)
                    .map_err(|e| EmbedError::Cache(format!("bad header: {e}")))?,
                None => Header {
                    format: FORMAT.into(),
                    version: VERSION,
                },
            };
            if header.format != FORMAT || header.version != VERSION {
                return Err(EmbedError::Cache(format!(
                    "unsupported cache {} v{} (expected {FORMAT} v{VERSION})",
                    header.format, header.version
                )));
            }
            for line in lines {
                let line = line.map_err(io_err)?;
                match serde_json::from_str::<Entry>(&line) {
                    Ok(entry) if entry.values.dim() == inner.dim() => {
                        memory.insert(entry.key, entry.values);
                    }
                    Ok(_) => {}
                    Err(e) => log::warn!("skipping unreadable cache line: {e}"),
                }
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err)?;
        if !exists || file.metadata().map_err(io_err)?.len() == 0 {
            let header = serde_json::to_string(&Header {
                format: FORMAT.into(),
                version: VERSION,
            })
            .expect("header serializes");
            writeln!(file, "{header}").map_err(io_err)?;
        }
        Ok(CachedEncoder {
            inner,
            path: Some(path),
            memory: Mutex::new(memory),
            writer: Mutex::new(Some(BufWriter::new(file))),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.memory.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    fn key(&self, text: &str) -> String {
        let mut h = Sha256::new();
        h.update(self.inner.name().as_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        hex::encode(h.finalize())
    }

    fn store(&self, key: String, values: &EmbeddingVector) -> Result<(), EmbedError> {
        let mut writer = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(w) = writer.as_mut() {
            let line = serde_json::to_string(&Entry {
                key: key.clone(),
                values: values.clone(),
            })
            .map_err(|e| EmbedError::Cache(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| EmbedError::Cache(e.to_string()))?;
        }
        drop(writer);
        self.memory
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key, values.clone());
        Ok(())
    }

    pub fn flush(&self) -> Result<(), EmbedError> {
        if let Some(w) = self.writer.lock().unwrap_or_else(|e| e.into_inner()).as_mut() {
            w.flush().map_err(|e| EmbedError::Cache(e.to_string()))?;
        }
        Ok(())
    }
}

impl<E: Encoder> Encoder for CachedEncoder<E> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        Ok(self.encode_batch(&[text.to_string()])?.remove(0))
    }

    fn encode_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let keys: Vec<String> = texts.iter().map(|t| self.key(t)).collect();
        let mut out: Vec<Option<EmbeddingVector>> = {
            let memory = self.memory.lock().unwrap_or_else(|e| e.into_inner());
            keys.iter().map(|k| memory.get(k).cloned()).collect()
        };
        let mut missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        // Encode each distinct missing text once.
        missing.sort_by(|&a, &b| texts[a].cmp(&texts[b]));
        missing.dedup_by(|a, b| texts[*a] == texts[*b]);
        if !missing.is_empty() {
            let batch: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
            let fresh = self.inner.encode_batch(&batch)?;
            for (&i, v) in missing.iter().zip(fresh) {
                self.store(keys[i].clone(), &v)?;
            }
            let memory = self.memory.lock().unwrap_or_else(|e| e.into_inner());
            for (slot, key) in out.iter_mut().zip(&keys) {
                if slot.is_none() {
                    *slot = memory.get(key).cloned();
                }
            }
        }
        self.flush()?;
        Ok(out.into_iter().map(|v| v.expect("every key resolved")).collect())
    }
}

impl<E> Drop for CachedEncoder<E> {
    fn drop(&mut self) {
        if let Some(w) = self.writer.get_mut().unwrap_or_else(|e| e.into_inner()).as_mut() {
            let _ = w.flush();
        }
    }
}
