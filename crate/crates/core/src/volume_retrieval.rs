//! Volume-based retrieval: element-wise pooling of a volume's slice
//! embeddings into one representative vector, one index per pooling method,
//! whole-volume search.

use rayon::prelude::*;

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::index::{build_index, IndexKind, StoredIndex};
use crate::manifest::{Dataset, Split};
use crate::ranking::{RankedList, RankedVolume};
use crate::slice_retrieval::sim_score;

/// Slice-embedding aggregation methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PoolingMethod {
    Median,
    Max,
    Average,
    Std,
}

impl PoolingMethod {
    pub const ALL: [PoolingMethod; 4] = [
        PoolingMethod::Median,
        PoolingMethod::Max,
        PoolingMethod::Average,
        PoolingMethod::Std,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PoolingMethod::Median => "median",
            PoolingMethod::Max => "max",
            PoolingMethod::Average => "average",
            PoolingMethod::Std => "std",
        }
    }
}

impl std::fmt::Display for PoolingMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PoolingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "median" => Ok(PoolingMethod::Median),
            "max" => Ok(PoolingMethod::Max),
            "average" => Ok(PoolingMethod::Average),
            "std" => Ok(PoolingMethod::Std),
            other => Err(Error::validation(format!(
                "unknown pooling method \"{other}\""
            ))),
        }
    }
}

/// One representative embedding vector for a whole volume.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledEmbedding {
    pub volume_id: String,
    pub method: PoolingMethod,
    pub vector: Vec<f32>,
}

/// Pool a slice matrix component-wise. The median of an even count is the
/// midpoint of the two middle values; std is the population standard
/// deviation (a single row pools to the zero vector).
pub fn pool_embeddings(matrix: &EmbeddingMatrix, method: PoolingMethod) -> Result<PooledEmbedding> {
    if matrix.is_empty() {
        return Err(Error::validation(format!(
            "cannot pool empty embedding matrix for volume \"{}\"",
            matrix.volume_id
        )));
    }
    let dim = matrix.dim();
    let n = matrix.num_slices();
    let mut vector = Vec::with_capacity(dim);
    let mut column = Vec::with_capacity(n);
    for j in 0..dim {
        column.clear();
        column.extend(matrix.rows().iter().map(|(_, v)| v[j]));
        vector.push(pool_component(&column, method));
    }
    Ok(PooledEmbedding {
        volume_id: matrix.volume_id.clone(),
        method,
        vector,
    })
}

fn pool_component(values: &[f32], method: PoolingMethod) -> f32 {
    let n = values.len();
    match method {
        PoolingMethod::Max => values.iter().copied().fold(f32::NEG_INFINITY, f32::max),
        PoolingMethod::Median => {
            let mut sorted = values.to_vec();
            sorted.sort_by(f32::total_cmp);
            if n % 2 == 1 {
                sorted[n / 2]
            } else {
                let lo = sorted[n / 2 - 1] as f64;
                let hi = sorted[n / 2] as f64;
                ((lo + hi) / 2.0) as f32
            }
        }
        PoolingMethod::Average => {
            let sum: f64 = values.iter().map(|&v| v as f64).sum();
            (sum / n as f64) as f32
        }
        PoolingMethod::Std => {
            // shifted by the first value so constant columns come out
            // exactly zero
            let anchor = values[0] as f64;
            let mut sum = 0.0f64;
            let mut sum_sq = 0.0f64;
            for &v in values {
                let d = v as f64 - anchor;
                sum += d;
                sum_sq += d * d;
            }
            let mean = sum / n as f64;
            let var = (sum_sq / n as f64 - mean * mean).max(0.0);
            var.sqrt() as f32
        }
    }
}

/// Build the 3D index for one pooling method over the train split.
pub fn build_volume_index(dataset: &Dataset, method: PoolingMethod) -> Result<StoredIndex> {
    let entries: Vec<_> = dataset.manifest.split_entries(Split::Train).collect();
    let pooled: Vec<PooledEmbedding> = entries
        .par_iter()
        .map(|entry| {
            let matrix = dataset.load_slice_embeddings(entry)?;
            if matrix.is_empty() {
                return Err(Error::validation(format!(
                    "volume \"{}\" has no slices",
                    entry.volume_id
                )));
            }
            pool_embeddings(&matrix, method)
        })
        .collect::<Result<_>>()?;
    let items = pooled
        .into_iter()
        .map(|p| (p.volume_id, p.vector))
        .collect();
    Ok(StoredIndex {
        kind: IndexKind::Volume(method),
        index: build_index(items, dataset.manifest.embedding_dim)?,
    })
}

/// Pool a query volume with `method` and search a volume index built with
/// the same method. Scores are `sim_score(distance)`.
pub fn volume_search(
    stored: &StoredIndex,
    query: &EmbeddingMatrix,
    method: PoolingMethod,
    k: usize,
) -> Result<RankedList> {
    if stored.kind != IndexKind::Volume(method) {
        return Err(Error::validation(format!(
            "index kind {} does not match query pooling volume-{}",
            stored.kind,
            method.as_str()
        )));
    }
    let pooled = pool_embeddings(query, method)?;
    let method_name = format!("volume-{}", method.as_str());
    if stored.index.is_empty() {
        return Ok(RankedList::new(method_name, Vec::new()));
    }
    let neighbors = stored.index.search(&pooled.vector, k)?;
    let entries = neighbors
        .into_iter()
        .map(|n| {
            Ok(RankedVolume {
                volume_id: n.key,
                score: sim_score(n.distance)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(RankedList::new(method_name, entries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(rows: Vec<Vec<f32>>) -> EmbeddingMatrix {
        let dim = rows[0].len();
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(i, v)| (i as u32, v))
            .collect();
        EmbeddingMatrix::new("q", dim, rows).unwrap()
    }

    fn pool(rows: Vec<Vec<f32>>, method: PoolingMethod) -> Vec<f32> {
        pool_embeddings(&matrix(rows), method).unwrap().vector
    }

    #[test]
    fn average_of_two_rows() {
        assert_eq!(
            pool(vec![vec![1.0, 3.0], vec![3.0, 5.0]], PoolingMethod::Average),
            vec![2.0, 4.0]
        );
    }

    #[test]
    fn max_of_three_rows() {
        assert_eq!(
            pool(
                vec![vec![1.0, 3.0], vec![3.0, 5.0], vec![2.0, 0.0]],
                PoolingMethod::Max
            ),
            vec![3.0, 5.0]
        );
    }

    #[test]
    fn std_of_zero_and_two_is_one() {
        assert_eq!(pool(vec![vec![0.0], vec![2.0]], PoolingMethod::Std), vec![1.0]);
    }

    #[test]
    fn median_of_even_count_is_midpoint() {
        assert_eq!(
            pool(
                vec![vec![1.0], vec![2.0], vec![4.0], vec![100.0]],
                PoolingMethod::Median
            ),
            vec![3.0]
        );
    }

    #[test]
    fn single_row_degenerate_cases() {
        let row = vec![vec![7.0, -2.5]];
        for method in [PoolingMethod::Median, PoolingMethod::Max, PoolingMethod::Average] {
            assert_eq!(pool(row.clone(), method), vec![7.0, -2.5]);
        }
        assert_eq!(pool(row, PoolingMethod::Std), vec![0.0, 0.0]);
    }

    #[test]
    fn empty_matrix_is_error() {
        let m = EmbeddingMatrix::new("q", 2, vec![]).unwrap();
        assert!(pool_embeddings(&m, PoolingMethod::Average).is_err());
    }

    #[test]
    fn std_of_identical_rows_is_exactly_zero() {
        // 0.1 is not dyadic: the naive mean would miss it by an ulp
        let rows = vec![vec![0.1f32, -3.7], vec![0.1, -3.7], vec![0.1, -3.7]];
        assert_eq!(pool(rows, PoolingMethod::Std), vec![0.0, 0.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pooling_is_permutation_invariant(
            vals in proptest::collection::vec(-50.0f32..50.0, 6),
            rot in 0usize..3,
        ) {
            let rows: Vec<Vec<f32>> = vals.chunks(2).map(|c| c.to_vec()).collect();
            let mut shuffled = rows.clone();
            shuffled.rotate_left(rot);
            for method in PoolingMethod::ALL {
                prop_assert_eq!(pool(rows.clone(), method), pool(shuffled.clone(), method));
            }
        }

        #[test]
        fn max_dominates_average(vals in proptest::collection::vec(-50.0f32..50.0, 9)) {
            let rows: Vec<Vec<f32>> = vals.chunks(3).map(|c| c.to_vec()).collect();
            let mx = pool(rows.clone(), PoolingMethod::Max);
            let avg = pool(rows, PoolingMethod::Average);
            for (m, a) in mx.iter().zip(avg.iter()) {
                prop_assert!(m >= a, "max {m} < average {a}");
            }
        }

        #[test]
        fn average_is_linear_in_scaling(
            vals in proptest::collection::vec(-8.0f32..8.0, 6),
            alpha in -4.0f32..4.0,
        ) {
            // use a power-of-two-friendly alpha grid to stay exact
            let alpha = (alpha * 4.0).round() / 4.0;
            let rows: Vec<Vec<f32>> = vals.chunks(2).map(|c| c.to_vec()).collect();
            let scaled: Vec<Vec<f32>> = rows
                .iter()
                .map(|r| r.iter().map(|v| v * alpha).collect())
                .collect();
            let base = pool(rows, PoolingMethod::Average);
            let got = pool(scaled, PoolingMethod::Average);
            for (g, b) in got.iter().zip(base.iter()) {
                prop_assert!((g - b * alpha).abs() <= 1e-4 * (1.0 + b.abs() * alpha.abs()));
            }
        }
    }

    #[test]
    fn search_finds_identical_volume_at_rank_one() {
        use crate::index::build_index;

        let q = matrix(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let pooled = pool_embeddings(&q, PoolingMethod::Average).unwrap();
        let stored = StoredIndex {
            kind: IndexKind::Volume(PoolingMethod::Average),
            index: build_index(
                vec![
                    ("self".into(), pooled.vector.clone()),
                    ("far".into(), vec![100.0, 100.0]),
                ],
                2,
            )
            .unwrap(),
        };
        let ranked = volume_search(&stored, &q, PoolingMethod::Average, 2).unwrap();
        assert_eq!(ranked.entries[0].volume_id, "self");
        assert_eq!(ranked.entries[0].score, 1.0); // distance 0
    }

    #[test]
    fn method_mismatch_is_error() {
        use crate::index::build_index;

        let stored = StoredIndex {
            kind: IndexKind::Volume(PoolingMethod::Average),
            index: build_index(vec![("a".into(), vec![0.0])], 1).unwrap(),
        };
        let q = matrix(vec![vec![1.0]]);
        let err = volume_search(&stored, &q, PoolingMethod::Max, 1).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }
}
