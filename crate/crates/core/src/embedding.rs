//! Per-slice embedding matrices and the EMB1 binary file format.
//!
//! An EMB1 file is laid out as:
//!
//! ```text
//! magic   9 bytes   "3DMIREMB1"
//! version u8        1
//! dim     u32 LE    vector dimensionality
//! count   u64 LE    number of rows
//! rows    count x { slice_index: u32 LE, values: dim x f32 LE }
//! ```
//!
//! The same format carries slice embeddings, pooled volume embeddings
//! (index persistence) and caption embeddings.

use std::path::Path;

use crate::error::{Error, Result};
use crate::util::{atomic_write, read_file};

pub const EMB1_MAGIC: &[u8; 9] = b"3DMIREMB1";
pub const EMB1_VERSION: u8 = 1;

/// Ordered per-slice embedding vectors for one volume.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub volume_id: String,
    dim: usize,
    rows: Vec<(u32, Vec<f32>)>,
}

impl EmbeddingMatrix {
    /// Build a matrix, checking the invariants: `dim > 0`, slice indices
    /// strictly increasing, every vector of length `dim` with finite
    /// components.
    pub fn new(volume_id: impl Into<String>, dim: usize, rows: Vec<(u32, Vec<f32>)>) -> Result<Self> {
        let volume_id = volume_id.into();
        if dim == 0 {
            return Err(Error::validation("embedding dim must be positive"));
        }
        let mut prev: Option<u32> = None;
        for (idx, vec) in &rows {
            if let Some(p) = prev {
                if *idx <= p {
                    return Err(Error::validation(format!(
                        "slice indices not strictly increasing ({p} then {idx}) in volume {volume_id}"
                    )));
                }
            }
            prev = Some(*idx);
            if vec.len() != dim {
                return Err(Error::validation(format!(
                    "slice {idx} has {} components, expected {dim}",
                    vec.len()
                )));
            }
            if vec.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!(
                    "non-finite component in slice {idx} of volume {volume_id}"
                )));
            }
        }
        Ok(Self { volume_id, dim, rows })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[(u32, Vec<f32>)] {
        &self.rows
    }

    pub fn num_slices(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Replace the volume id (files do not store it; it comes from context).
    pub fn with_volume_id(mut self, volume_id: impl Into<String>) -> Self {
        self.volume_id = volume_id.into();
        self
    }
}

/// Serialize a matrix to EMB1 bytes.
pub fn encode_embeddings(matrix: &EmbeddingMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(22 + matrix.rows.len() * (4 + matrix.dim * 4));
    out.extend_from_slice(EMB1_MAGIC);
    out.push(EMB1_VERSION);
    out.extend_from_slice(&(matrix.dim as u32).to_le_bytes());
    out.extend_from_slice(&(matrix.rows.len() as u64).to_le_bytes());
    for (idx, vec) in &matrix.rows {
        out.extend_from_slice(&idx.to_le_bytes());
        for v in vec {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Write a matrix to an EMB1 file (atomic).
pub fn write_embeddings(path: &Path, matrix: &EmbeddingMatrix) -> Result<()> {
    atomic_write(path, &encode_embeddings(matrix))
}

/// Load an EMB1 file. The matrix `volume_id` is set to the file stem;
/// callers that know better override it with
/// [`EmbeddingMatrix::with_volume_id`].
pub fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let bytes = read_file(path)?;
    decode_embeddings(&bytes, path)
}

fn decode_embeddings(bytes: &[u8], path: &Path) -> Result<EmbeddingMatrix> {
    if bytes.len() < 22 {
        return Err(Error::format(path, "file shorter than EMB1 header"));
    }
    if &bytes[0..9] != EMB1_MAGIC {
        return Err(Error::format(path, "bad magic, not an EMB1 file"));
    }
    if bytes[9] != EMB1_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported EMB1 version {}", bytes[9]),
        ));
    }
    let dim = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[14..22].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(Error::format(path, "header declares dim 0"));
    }
    let row_size = 4 + dim * 4;
    let expected = 22 + count * row_size;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "declared {count} rows of dim {dim} ({expected} bytes) but file has {} bytes",
                bytes.len()
            ),
        ));
    }

    let mut rows = Vec::with_capacity(count);
    let mut off = 22;
    for _ in 0..count {
        let idx = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        off += 4;
        let mut vec = Vec::with_capacity(dim);
        for _ in 0..dim {
            let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            off += 4;
            if !v.is_finite() {
                return Err(Error::data(
                    path,
                    format!("non-finite component in row {idx}"),
                ));
            }
            vec.push(v);
        }
        rows.push((idx, vec));
    }

    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    EmbeddingMatrix::new(stem, dim, rows)
        .map_err(|e| Error::format(path, e.to_string()))
}
