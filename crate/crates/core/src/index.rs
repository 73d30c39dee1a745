//! Exact Euclidean nearest-neighbor index over fixed-dimension vectors.
//!
//! The index is a frozen flat store searched by brute force. Exactness (no
//! approximation) keeps every downstream ranking reproducible; corpus sizes
//! here (hundreds of volumes, tens of thousands of slices) do not need ANN.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::embedding::{encode_embeddings, load_embeddings, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::util::{atomic_write, read_text};
use crate::volume_retrieval::PoolingMethod;

/// One search hit.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub key: String,
    pub distance: f64,
}

/// Euclidean distance between two vectors, accumulated in f64 even though
/// stored vectors are f32, so tie comparisons are stable.
pub fn euclidean_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = *x as f64 - *y as f64;
        acc += d * d;
    }
    Ok(acc.sqrt())
}

/// A frozen flat vector index. Immutable once built; searches from many
/// threads are safe.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    entries: Vec<(String, Vec<f32>)>,
}

impl VectorIndex {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, Vec<f32>)] {
        &self.entries
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    /// Exact top-k search: `min(k, len)` neighbors sorted by
    /// (distance ascending, key ascending).
    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor>> {
        self.search_filtered(query, k, |_| true)
    }

    /// Exact top-k search restricted to entries whose key passes `keep`.
    pub fn search_filtered(
        &self,
        query: &[f32],
        k: usize,
        keep: impl Fn(&str) -> bool,
    ) -> Result<Vec<Neighbor>> {
        if k == 0 {
            return Err(Error::validation("search k must be positive"));
        }
        if query.len() != self.dim {
            return Err(Error::validation(format!(
                "query dim {} does not match index dim {}",
                query.len(),
                self.dim
            )));
        }
        let mut hits: Vec<(f64, &str)> = self
            .entries
            .iter()
            .filter(|(key, _)| keep(key))
            .map(|(key, vec)| {
                let d = euclidean_distance(query, vec).expect("index vectors share dim");
                (d, key.as_str())
            })
            .collect();

        let cmp = |a: &(f64, &str), b: &(f64, &str)| {
            a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1))
        };
        if k < hits.len() {
            hits.select_nth_unstable_by(k - 1, cmp);
            hits.truncate(k);
        }
        hits.sort_unstable_by(cmp);
        Ok(hits
            .into_iter()
            .map(|(distance, key)| Neighbor {
                key: key.to_string(),
                distance,
            })
            .collect())
    }
}

/// Build a frozen index from `(key, vector)` items.
pub fn build_index(items: Vec<(String, Vec<f32>)>, dim: usize) -> Result<VectorIndex> {
    if dim == 0 {
        return Err(Error::validation("index dim must be positive"));
    }
    let mut seen = BTreeSet::new();
    for (key, vec) in &items {
        if !seen.insert(key.as_str()) {
            return Err(Error::validation(format!("duplicate index key \"{key}\"")));
        }
        if vec.len() != dim {
            return Err(Error::validation(format!(
                "key \"{key}\" has dim {}, expected {dim}",
                vec.len()
            )));
        }
        if vec.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "key \"{key}\" has non-finite components"
            )));
        }
    }
    Ok(VectorIndex { dim, entries: items })
}

/// What an index holds, recorded in its metadata sidecar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexKind {
    Slice,
    Volume(PoolingMethod),
}

impl std::fmt::Display for IndexKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IndexKind::Slice => f.write_str("slice"),
            IndexKind::Volume(m) => write!(f, "volume-{}", m.as_str()),
        }
    }
}

impl std::str::FromStr for IndexKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slice" => Ok(IndexKind::Slice),
            other => match other.strip_prefix("volume-") {
                Some(m) => Ok(IndexKind::Volume(m.parse()?)),
                None => Err(Error::validation(format!("unknown index kind \"{s}\""))),
            },
        }
    }
}

/// A vector index together with the kind recorded in its metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredIndex {
    pub kind: IndexKind,
    pub index: VectorIndex,
}

fn file_paths(dir: &Path, kind: IndexKind) -> (PathBuf, PathBuf, PathBuf) {
    let stem = kind.to_string();
    (
        dir.join(format!("{stem}.emb")),
        dir.join(format!("{stem}.keys")),
        dir.join(format!("{stem}.meta")),
    )
}

/// Persist an index under `dir` as three files: `<kind>.emb` (EMB1 vectors,
/// record ids are positions), `<kind>.keys` (one key per line, line number =
/// record id) and `<kind>.meta` (single `kind=<kind>` line).
pub fn save_index(dir: &Path, stored: &StoredIndex) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (emb_path, keys_path, meta_path) = file_paths(dir, stored.kind);

    let rows: Vec<(u32, Vec<f32>)> = stored
        .index
        .entries
        .iter()
        .enumerate()
        .map(|(i, (_, v))| (i as u32, v.clone()))
        .collect();
    let matrix = EmbeddingMatrix::new("", stored.index.dim, rows)?;
    atomic_write(&emb_path, &encode_embeddings(&matrix))?;

    let mut keys = String::new();
    for (k, _) in &stored.index.entries {
        keys.push_str(k);
        keys.push('\n');
    }
    atomic_write(&keys_path, keys.as_bytes())?;
    atomic_write(&meta_path, format!("kind={}\n", stored.kind).as_bytes())?;
    Ok(())
}

/// True when all three files of `kind` exist in `dir`.
pub fn index_exists(dir: &Path, kind: IndexKind) -> bool {
    let (e, k, m) = file_paths(dir, kind);
    e.exists() && k.exists() && m.exists()
}

/// Load a persisted index, verifying the metadata records the expected kind.
pub fn load_index(dir: &Path, kind: IndexKind) -> Result<StoredIndex> {
    let (emb_path, keys_path, meta_path) = file_paths(dir, kind);

    let meta = read_text(&meta_path)?;
    let recorded = meta
        .trim()
        .strip_prefix("kind=")
        .ok_or_else(|| Error::format(&meta_path, "missing kind= line"))?;
    let recorded: IndexKind = recorded.parse()?;
    if recorded != kind {
        return Err(Error::validation(format!(
            "index at {} records kind {recorded}, expected {kind}",
            meta_path.display()
        )));
    }

    let matrix = load_embeddings(&emb_path)?;
    let keys_text = read_text(&keys_path)?;
    let keys: Vec<&str> = keys_text.lines().collect();
    if keys.len() != matrix.num_slices() {
        return Err(Error::format(
            &keys_path,
            format!(
                "{} keys but {} vectors in {}",
                keys.len(),
                matrix.num_slices(),
                emb_path.display()
            ),
        ));
    }
    let items: Vec<(String, Vec<f32>)> = keys
        .iter()
        .zip(matrix.rows().iter())
        .map(|(k, (_, v))| (k.to_string(), v.clone()))
        .collect();
    Ok(StoredIndex {
        kind,
        index: build_index(items, matrix.dim())?,
    })
}
