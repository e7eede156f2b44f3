//! Binary embedding matrices.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "HSE1"
//! 4       4     version (u32) = 1
//! 8       4     row count n (u32)
//! 12      4     dimension d (u32)
//! 16      4     logit scale (f32)
//! 20      4nd   row-major f32 payload, one row per frame or phrasing
//! ```

use std::path::Path;

use thiserror::Error;

use super::{read_bytes, write_atomic, IngestError};
use crate::signal::{EmbeddingVector, LogitScale, SignalError};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"HSE1";
pub const EMBEDDING_VERSION: u32 = 1;
pub const EMBEDDING_HEADER_LEN: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("file is {actual} bytes, shorter than the {EMBEDDING_HEADER_LEN}-byte header")]
    HeaderTooShort { actual: usize },
    #[error("bad magic {found:?}, expected \"HSE1\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("logit scale must be positive and finite, got {0}")]
    NonPositiveScale(f32),
    #[error("payload truncated: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: u128, actual: u128 },
    #[error("trailing bytes: expected {expected} payload bytes, found {actual}")]
    TrailingBytes { expected: u128, actual: u128 },
    #[error("value at row {row}, column {col} is not finite")]
    NonFiniteValue { row: usize, col: usize },
    #[error("row count {rows} x dimension {dim} does not match {len} values")]
    ShapeMismatch { rows: usize, dim: usize, len: usize },
    #[error("{rows} rows or dimension {dim} exceed the 32-bit header fields")]
    TooLarge { rows: usize, dim: usize },
}

/// `rows x dim` matrix of `f32` with the logit scale it was produced under.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
    logit_scale: f32,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>, logit_scale: f32) -> Result<Self, FormatError> {
        if dim == 0 {
            return Err(FormatError::ZeroDimension);
        }
        if rows.checked_mul(dim) != Some(data.len()) {
            return Err(FormatError::ShapeMismatch {
                rows,
                dim,
                len: data.len(),
            });
        }
        if u32::try_from(rows).is_err() || u32::try_from(dim).is_err() {
            return Err(FormatError::TooLarge { rows, dim });
        }
        if !(logit_scale.is_finite() && logit_scale > 0.0) {
            return Err(FormatError::NonPositiveScale(logit_scale));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(FormatError::NonFiniteValue {
                row: i / dim,
                col: i % dim,
            });
        }
        Ok(Self {
            rows,
            dim,
            data,
            logit_scale,
        })
    }

    pub fn from_rows(rows: &[Vec<f32>], logit_scale: f32) -> Result<Self, FormatError> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(FormatError::ShapeMismatch {
                rows: rows.len(),
                dim,
                len: bad.len(),
            });
        }
        Self::new(rows.len(), dim, rows.concat(), logit_scale)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn raw_logit_scale(&self) -> f32 {
        self.logit_scale
    }

    pub fn logit_scale(&self) -> LogitScale {
        LogitScale::new(f64::from(self.logit_scale)).expect("validated at construction")
    }

    pub fn to_vectors(&self) -> Result<Vec<EmbeddingVector>, SignalError> {
        (0..self.rows)
            .map(|i| EmbeddingVector::from_f32(self.row(i)))
            .collect()
    }
}

pub fn encode_embeddings(m: &EmbeddingMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(EMBEDDING_HEADER_LEN + 4 * m.data.len());
    out.extend_from_slice(&EMBEDDING_MAGIC);
    out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows as u32).to_le_bytes());
    out.extend_from_slice(&(m.dim as u32).to_le_bytes());
    out.extend_from_slice(&m.logit_scale.to_le_bytes());
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingMatrix, FormatError> {
    if bytes.len() < EMBEDDING_HEADER_LEN {
        return Err(FormatError::HeaderTooShort {
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != EMBEDDING_MAGIC {
        return Err(FormatError::BadMagic { found: magic });
    }
    let version = u32_at(bytes, 4);
    if version != EMBEDDING_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let rows = u32_at(bytes, 8) as usize;
    let dim = u32_at(bytes, 12) as usize;
    if dim == 0 {
        return Err(FormatError::ZeroDimension);
    }
    let scale = f32::from_le_bytes(bytes[16..20].try_into().unwrap());
    if !(scale.is_finite() && scale > 0.0) {
        return Err(FormatError::NonPositiveScale(scale));
    }
    let expected = 4 * rows as u128 * dim as u128;
    let actual = (bytes.len() - EMBEDDING_HEADER_LEN) as u128;
    if actual < expected {
        return Err(FormatError::TruncatedPayload { expected, actual });
    }
    if actual > expected {
        return Err(FormatError::TrailingBytes { expected, actual });
    }
    let data = bytes[EMBEDDING_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::new(rows, dim, data, scale)
}

pub fn read_embedding_file(path: &Path) -> Result<EmbeddingMatrix, IngestError> {
    decode_embeddings(&read_bytes(path)?).map_err(|source| IngestError::Embedding {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_embedding_file(path: &Path, m: &EmbeddingMatrix) -> Result<(), IngestError> {
    write_atomic(path, &encode_embeddings(m))
}
