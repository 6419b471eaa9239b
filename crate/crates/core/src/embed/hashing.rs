use unicode_normalization::UnicodeNormalization;

use super::{EmbedError, EmbeddingVector, Encoder};

pub const DEFAULT_DIM: usize = 256;
const MIN_DIM: usize = 16;
const BOUNDARY: char = '#';

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Offline encoder: signed feature hashing of character trigrams.
///
/// Text is NFC-normalized and lowercased, padded with `#` on both sides and
/// cut into overlapping character trigrams. Each trigram is hashed with
/// 64-bit FNV-1a over its UTF-8 bytes; the hash modulo `dim` picks the
/// bucket and bit 63 picks the sign. The accumulated vector is
/// L2-normalized. Vectors are identical across platforms.
#[derive(Debug, Clone)]
pub struct HashingEncoder {
    dim: usize,
    name: String,
}

impl HashingEncoder {
    pub fn new(dim: usize) -> Result<Self, EmbedError> {
        if dim < MIN_DIM {
            return Err(EmbedError::Config(format!(
                "hashing encoder needs dim >= {MIN_DIM}, got {dim}"
            )));
        }
        Ok(HashingEncoder {
            dim,
            name: format!("hash-trigram-fnv1a64-m{dim}"),
        })
    }

    /// Character trigrams of the normalized, padded text.
    pub fn trigrams(text: &str) -> Vec<String> {
        let folded: String = text.nfc().collect::<String>().to_lowercase().nfc().collect();
        if folded.trim().is_empty() {
            return Vec::new();
        }
        let chars: Vec<char> = std::iter::once(BOUNDARY)
            .chain(folded.chars())
            .chain(std::iter::once(BOUNDARY))
            .collect();
        chars.windows(3).map(|w| w.iter().collect()).collect()
    }

    fn embed(&self, text: &str) -> EmbeddingVector {
        let mut values = vec![0.0f64; self.dim];
        for gram in Self::trigrams(text) {
            let h = fnv1a64(gram.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            values[bucket] += sign;
        }
        EmbeddingVector::normalized(values)
    }
}

impl Default for HashingEncoder {
    fn default() -> Self {
        HashingEncoder::new(DEFAULT_DIM).expect("default dim is valid")
    }
}

impl Encoder for HashingEncoder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        Ok(self.embed(text))
    }
}
