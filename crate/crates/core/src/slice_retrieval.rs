//! Slice-based retrieval: query with every slice of a volume, pool the
//! retrieved slices, and score parent volumes by frequency, maximum
//! similarity, or summed similarity.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::index::{build_index, IndexKind, StoredIndex};
use crate::manifest::{Dataset, Split};
use crate::ranking::{RankedList, RankedVolume};

/// Default number of similar slices retrieved per query slice.
pub const DEFAULT_N_PER_SLICE: usize = 20;

/// Key of one indexed slice: `<volume_id>#<slice_index>`.
pub fn slice_key(volume_id: &str, slice_index: u32) -> String {
    format!("{volume_id}#{slice_index}")
}

/// Parent volume id of a slice key (everything before the last `#`).
pub fn parent_volume_id(slice_key: &str) -> &str {
    match slice_key.rsplit_once('#') {
        Some((parent, _)) => parent,
        None => slice_key,
    }
}

/// One retrieved slice in a pool.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedSlice {
    pub slice_key: String,
    pub parent_volume_id: String,
    pub distance: f64,
}

/// All slices retrieved for one query volume, before aggregation.
#[derive(Debug, Clone)]
pub struct SlicePool {
    pub query_volume_id: String,
    pub retrieved: Vec<RetrievedSlice>,
    pub n_per_slice: usize,
    pub num_query_slices: usize,
}

/// How a pool was aggregated into volume scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMethod {
    Freq,
    MaxScore,
    ScoreSum,
}

impl ScoreMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMethod::Freq => "freq",
            ScoreMethod::MaxScore => "max_score",
            ScoreMethod::ScoreSum => "score_sum",
        }
    }

    /// The retrieval-method name this scorer corresponds to.
    pub fn method_name(self) -> &'static str {
        match self {
            ScoreMethod::Freq => "slice-freq",
            ScoreMethod::MaxScore => "slice-max",
            ScoreMethod::ScoreSum => "slice-sum",
        }
    }
}

/// Score of one parent volume under one aggregation method.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeScore {
    pub volume_id: String,
    pub score: f64,
    pub method: ScoreMethod,
}

/// Similarity from Euclidean distance: `1 / (1 + d)`. Strictly decreasing,
/// range (0, 1].
pub fn sim_score(distance: f64) -> Result<f64> {
    if distance < 0.0 {
        return Err(Error::validation(format!(
            "distance must be non-negative, got {distance}"
        )));
    }
    Ok(1.0 / (1.0 + distance))
}

/// Build the 2D slice index over the train split: every slice of every
/// train volume, keyed `<volume_id>#<slice_index>`.
pub fn build_slice_index(dataset: &Dataset) -> Result<StoredIndex> {
    let entries: Vec<_> = dataset.manifest.split_entries(Split::Train).collect();
    let per_volume: Vec<Vec<(String, Vec<f32>)>> = entries
        .par_iter()
        .map(|entry| {
            let matrix = dataset.load_slice_embeddings(entry)?;
            if matrix.is_empty() {
                return Err(Error::validation(format!(
                    "volume \"{}\" has no slices",
                    entry.volume_id
                )));
            }
            Ok(matrix
                .rows()
                .iter()
                .map(|(idx, v)| (slice_key(&entry.volume_id, *idx), v.clone()))
                .collect())
        })
        .collect::<Result<_>>()?;
    let items: Vec<(String, Vec<f32>)> = per_volume.into_iter().flatten().collect();
    Ok(StoredIndex {
        kind: IndexKind::Slice,
        index: build_index(items, dataset.manifest.embedding_dim)?,
    })
}

/// Query the slice index with every slice of `query`; for each query slice
/// keep its `n_per_slice` nearest indexed slices after excluding slices of
/// the query volume itself.
pub fn retrieve_slice_pool(
    query: &EmbeddingMatrix,
    stored: &StoredIndex,
    n_per_slice: usize,
) -> Result<SlicePool> {
    if stored.kind != IndexKind::Slice {
        return Err(Error::validation(format!(
            "slice retrieval needs a slice index, got kind {}",
            stored.kind
        )));
    }
    if query.is_empty() {
        return Err(Error::validation(format!(
            "query volume \"{}\" has no slices",
            query.volume_id
        )));
    }
    if n_per_slice == 0 {
        return Err(Error::validation("n_per_slice must be positive"));
    }
    if query.dim() != stored.index.dim() {
        return Err(Error::validation(format!(
            "query dim {} does not match index dim {}",
            query.dim(),
            stored.index.dim()
        )));
    }

    let query_id = query.volume_id.as_str();
    // the index may be empty or hold only the query's own slices; then every
    // per-slice result is empty and so is the pool
    let per_slice: Vec<Vec<RetrievedSlice>> = query
        .rows()
        .par_iter()
        .map(|(_, vector)| {
            if stored.index.is_empty() {
                return Ok(Vec::new());
            }
            let hits = stored.index.search_filtered(vector, n_per_slice, |key| {
                parent_volume_id(key) != query_id
            })?;
            Ok(hits
                .into_iter()
                .map(|n| {
                    let parent = parent_volume_id(&n.key).to_string();
                    RetrievedSlice {
                        slice_key: n.key,
                        parent_volume_id: parent,
                        distance: n.distance,
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    Ok(SlicePool {
        query_volume_id: query_id.to_string(),
        retrieved: per_slice.into_iter().flatten().collect(),
        n_per_slice,
        num_query_slices: query.num_slices(),
    })
}

fn group_by_parent(pool: &SlicePool) -> BTreeMap<&str, Vec<f64>> {
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in &pool.retrieved {
        groups
            .entry(r.parent_volume_id.as_str())
            .or_default()
            .push(r.distance);
    }
    groups
}

fn require_non_empty(pool: &SlicePool) -> Result<()> {
    if pool.retrieved.is_empty() {
        return Err(Error::validation(format!(
            "empty slice pool for query \"{}\"",
            pool.query_volume_id
        )));
    }
    Ok(())
}

/// Frequency scoring: per parent volume, the fraction of the pool its
/// slices occupy. Scores over all volumes sum to 1.
pub fn score_freq(pool: &SlicePool) -> Result<Vec<VolumeScore>> {
    require_non_empty(pool)?;
    let total = pool.retrieved.len() as f64;
    Ok(group_by_parent(pool)
        .into_iter()
        .map(|(id, dists)| VolumeScore {
            volume_id: id.to_string(),
            score: dists.len() as f64 / total,
            method: ScoreMethod::Freq,
        })
        .collect())
}

/// Maximum-similarity scoring: per parent volume, the best `sim_score` over
/// its retrieved slices.
pub fn score_max(pool: &SlicePool) -> Result<Vec<VolumeScore>> {
    require_non_empty(pool)?;
    group_by_parent(pool)
        .into_iter()
        .map(|(id, dists)| {
            let mut best = 0.0f64;
            for d in dists {
                best = best.max(sim_score(d)?);
            }
            Ok(VolumeScore {
                volume_id: id.to_string(),
                score: best,
                method: ScoreMethod::MaxScore,
            })
        })
        .collect()
}

/// Summed-similarity scoring: per parent volume, the sum of `sim_score`
/// over its retrieved slices. More matching slices can only increase it.
pub fn score_sum(pool: &SlicePool) -> Result<Vec<VolumeScore>> {
    require_non_empty(pool)?;
    group_by_parent(pool)
        .into_iter()
        .map(|(id, dists)| {
            let mut total = 0.0f64;
            for d in dists {
                total += sim_score(d)?;
            }
            Ok(VolumeScore {
                volume_id: id.to_string(),
                score: total,
                method: ScoreMethod::ScoreSum,
            })
        })
        .collect()
}

/// Apply the scorer selected by `method`.
pub fn score_pool(pool: &SlicePool, method: ScoreMethod) -> Result<Vec<VolumeScore>> {
    match method {
        ScoreMethod::Freq => score_freq(pool),
        ScoreMethod::MaxScore => score_max(pool),
        ScoreMethod::ScoreSum => score_sum(pool),
    }
}

/// Top-k volumes by (score descending, volume_id ascending).
pub fn rank_volumes(scores: &[VolumeScore], k: usize) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::validation("rank k must be positive"));
    }
    if scores.is_empty() {
        return Err(Error::validation("cannot rank an empty score list"));
    }
    let method = scores[0].method;
    let mut sorted: Vec<&VolumeScore> = scores.iter().collect();
    sorted.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.volume_id.cmp(&b.volume_id))
    });
    sorted.truncate(k);
    Ok(RankedList::new(
        method.method_name(),
        sorted
            .into_iter()
            .map(|s| RankedVolume {
                volume_id: s.volume_id.clone(),
                score: s.score,
            })
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool_from(parent_distances: &[(&str, f64)]) -> SlicePool {
        SlicePool {
            query_volume_id: "query".into(),
            retrieved: parent_distances
                .iter()
                .enumerate()
                .map(|(i, (parent, d))| RetrievedSlice {
                    slice_key: format!("{parent}#{i}"),
                    parent_volume_id: parent.to_string(),
                    distance: *d,
                })
                .collect(),
            n_per_slice: 20,
            num_query_slices: 1,
        }
    }

    #[test]
    fn sim_score_forced_values() {
        assert_eq!(sim_score(0.0).unwrap(), 1.0);
        assert_eq!(sim_score(1.0).unwrap(), 0.5);
        assert_eq!(sim_score(3.0).unwrap(), 0.25);
        assert!(sim_score(-0.1).is_err());
    }

    #[test]
    fn freq_counts_divided_by_pool_size() {
        // 40 slices, 10 from X
        let mut entries: Vec<(&str, f64)> = vec![("X", 1.0); 10];
        entries.extend(vec![("Y", 1.0); 30]);
        let scores = score_freq(&pool_from(&entries)).unwrap();
        let x = scores.iter().find(|s| s.volume_id == "X").unwrap();
        assert_eq!(x.score, 0.25);
    }

    #[test]
    fn freq_single_parent_is_one() {
        let scores = score_freq(&pool_from(&[("only", 0.3), ("only", 0.8)])).unwrap();
        assert_eq!(scores.len(), 1);
        assert_eq!(scores[0].score, 1.0);
    }

    #[test]
    fn freq_example_aabc() {
        let scores = score_freq(&pool_from(&[("A", 0.1), ("A", 0.2), ("B", 0.3), ("C", 0.4)]))
            .unwrap();
        let get = |id: &str| scores.iter().find(|s| s.volume_id == id).unwrap().score;
        assert_eq!(get("A"), 0.5);
        assert_eq!(get("B"), 0.25);
        assert_eq!(get("C"), 0.25);
        let total: f64 = scores.iter().map(|s| s.score).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn max_score_takes_best_slice() {
        let scores = score_max(&pool_from(&[("v", 1.0), ("v", 3.0)])).unwrap();
        assert_eq!(scores[0].score, 0.5);

        let scores = score_max(&pool_from(&[("v", 0.0)])).unwrap();
        assert_eq!(scores[0].score, 1.0);
    }

    #[test]
    fn max_score_ranking_example() {
        // A: {0.5} -> 1/1.5; B: {0.25, 4.0} -> 0.8; B outranks A
        let scores = score_max(&pool_from(&[("A", 0.5), ("B", 0.25), ("B", 4.0)])).unwrap();
        let get = |id: &str| scores.iter().find(|s| s.volume_id == id).unwrap().score;
        assert!((get("A") - 1.0 / 1.5).abs() < 1e-12);
        assert!((get("B") - 0.8).abs() < 1e-12);
        let ranked = rank_volumes(&scores, 2).unwrap();
        assert_eq!(ranked.entries[0].volume_id, "B");
    }

    #[test]
    fn score_sum_accumulates() {
        let scores = score_sum(&pool_from(&[("v", 1.0), ("v", 1.0)])).unwrap();
        assert_eq!(scores[0].score, 1.0);

        let scores = score_sum(&pool_from(&[("v", 0.0)])).unwrap();
        assert_eq!(scores[0].score, 1.0);
    }

    #[test]
    fn score_sum_rewards_cumulative_evidence() {
        // A: three slices at d=1 (1.5 total) beats B: one perfect slice (1.0)
        let scores =
            score_sum(&pool_from(&[("A", 1.0), ("A", 1.0), ("A", 1.0), ("B", 0.0)])).unwrap();
        let ranked = rank_volumes(&scores, 2).unwrap();
        assert_eq!(ranked.entries[0].volume_id, "A");
        assert!((ranked.entries[0].score - 1.5).abs() < 1e-12);
        assert_eq!(ranked.entries[1].volume_id, "B");
        assert_eq!(ranked.entries[1].score, 1.0);
    }

    #[test]
    fn empty_pool_is_error() {
        let empty = pool_from(&[]);
        assert!(score_freq(&empty).is_err());
        assert!(score_max(&empty).is_err());
        assert!(score_sum(&empty).is_err());
    }

    #[test]
    fn rank_ties_break_by_id() {
        let scores = score_freq(&pool_from(&[("A", 0.1), ("A", 0.2), ("B", 0.3), ("C", 0.4)]))
            .unwrap();
        let ranked = rank_volumes(&scores, 2).unwrap();
        assert_eq!(ranked.entries[0].volume_id, "A");
        assert_eq!(ranked.entries[1].volume_id, "B"); // B/C tie at 0.25

        let ranked_all = rank_volumes(&scores, 10).unwrap();
        assert_eq!(ranked_all.len(), 3);

        // all-equal scores come out lexicographic
        let tied = score_freq(&pool_from(&[("z", 0.1), ("a", 0.1), ("m", 0.1)])).unwrap();
        let ranked = rank_volumes(&tied, 3).unwrap();
        let ids: Vec<&str> = ranked.volume_ids().collect();
        assert_eq!(ids, ["a", "m", "z"]);
    }

    #[test]
    fn rank_k_zero_is_error() {
        let scores = score_freq(&pool_from(&[("A", 0.1)])).unwrap();
        assert!(rank_volumes(&scores, 0).is_err());
    }

    #[test]
    fn adding_a_slice_never_decreases_any_score() {
        use rand::{Rng, SeedableRng};

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let n = rng.random_range(1..30);
            let mut entries: Vec<(String, f64)> = (0..n)
                .map(|_| {
                    (
                        format!("v{}", rng.random_range(0..5)),
                        rng.random_range(0.0..8.0),
                    )
                })
                .collect();
            let refs: Vec<(&str, f64)> = entries.iter().map(|(s, d)| (s.as_str(), *d)).collect();
            let before = pool_from(&refs);
            let target = "v0".to_string();
            entries.push((target.clone(), rng.random_range(0.0..8.0)));
            let refs: Vec<(&str, f64)> = entries.iter().map(|(s, d)| (s.as_str(), *d)).collect();
            let after = pool_from(&refs);

            let get = |scores: &[VolumeScore], id: &str| -> f64 {
                scores
                    .iter()
                    .find(|s| s.volume_id == id)
                    .map(|s| s.score)
                    .unwrap_or(0.0)
            };
            // frequency numerator (count), max and sum all monotone in pool
            // membership for the volume that gained a slice
            let count_before = before.retrieved.iter().filter(|r| r.parent_volume_id == target).count();
            let count_after = after.retrieved.iter().filter(|r| r.parent_volume_id == target).count();
            assert_eq!(count_after, count_before + 1);
            assert!(
                get(&score_max(&after).unwrap(), &target)
                    >= get(&score_max(&before).unwrap(), &target)
            );
            assert!(
                get(&score_sum(&after).unwrap(), &target)
                    >= get(&score_sum(&before).unwrap(), &target)
            );
        }
    }

    #[test]
    fn freq_ranking_ignores_monotone_distance_transforms() {
        use rand::{Rng, SeedableRng};

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(22);
        for _ in 0..25 {
            let n = rng.random_range(1..40);
            let entries: Vec<(String, f64)> = (0..n)
                .map(|_| {
                    (
                        format!("v{}", rng.random_range(0..6)),
                        rng.random_range(0.0..5.0),
                    )
                })
                .collect();
            let refs: Vec<(&str, f64)> = entries.iter().map(|(s, d)| (s.as_str(), *d)).collect();
            let base = pool_from(&refs);
            // strictly increasing transform of every distance
            let transformed_entries: Vec<(&str, f64)> = entries
                .iter()
                .map(|(s, d)| (s.as_str(), d * d + 3.0 * d + 0.5))
                .collect();
            let transformed = pool_from(&transformed_entries);

            let rank = |pool: &SlicePool| -> Vec<String> {
                rank_volumes(&score_freq(pool).unwrap(), 10)
                    .unwrap()
                    .volume_ids()
                    .map(str::to_string)
                    .collect()
            };
            assert_eq!(rank(&base), rank(&transformed));
        }
    }

    #[test]
    fn score_sum_dominates_max_with_equality_iff_single_slice() {
        let pool = pool_from(&[("solo", 1.4), ("multi", 0.3), ("multi", 2.2)]);
        let max = score_max(&pool).unwrap();
        let sum = score_sum(&pool).unwrap();
        for (m, s) in max.iter().zip(sum.iter()) {
            assert_eq!(m.volume_id, s.volume_id);
            assert!(s.score >= m.score);
            let slice_count = pool
                .retrieved
                .iter()
                .filter(|r| r.parent_volume_id == m.volume_id)
                .count();
            if slice_count == 1 {
                assert_eq!(s.score, m.score);
            } else {
                assert!(s.score > m.score);
            }
        }
    }

    mod pool_tests {
        use super::*;
        use crate::index::build_index;

        fn slice_index(items: Vec<(String, Vec<f32>)>, dim: usize) -> StoredIndex {
            StoredIndex {
                kind: IndexKind::Slice,
                index: build_index(items, dim).unwrap(),
            }
        }

        #[test]
        fn pool_size_is_slices_times_n() {
            // 3-slice query, 100 indexed slices from other volumes, n=20
            let items: Vec<(String, Vec<f32>)> = (0..100)
                .map(|i| (slice_key(&format!("v{:02}", i / 10), i % 10), vec![i as f32, 0.0]))
                .collect();
            let idx = slice_index(items, 2);
            let query = EmbeddingMatrix::new(
                "query",
                2,
                vec![
                    (0, vec![0.0, 0.0]),
                    (1, vec![50.0, 0.0]),
                    (2, vec![99.0, 0.0]),
                ],
            )
            .unwrap();
            let pool = retrieve_slice_pool(&query, &idx, 20).unwrap();
            assert_eq!(pool.retrieved.len(), 60);
            assert_eq!(pool.num_query_slices, 3);
        }

        #[test]
        fn own_slices_are_excluded() {
            let items = vec![
                (slice_key("me", 0), vec![0.0]),
                (slice_key("me", 1), vec![1.0]),
            ];
            let idx = slice_index(items, 1);
            let query = EmbeddingMatrix::new("me", 1, vec![(0, vec![0.0])]).unwrap();
            let pool = retrieve_slice_pool(&query, &idx, 5).unwrap();
            assert!(pool.retrieved.is_empty());
        }

        #[test]
        fn single_slice_query_brute_force() {
            let items = vec![
                (slice_key("A", 1), vec![0.1]),
                (slice_key("B", 1), vec![0.2]),
            ];
            let idx = slice_index(items, 1);
            let query = EmbeddingMatrix::new("q", 1, vec![(0, vec![0.0])]).unwrap();
            let pool = retrieve_slice_pool(&query, &idx, 2).unwrap();
            assert_eq!(pool.retrieved.len(), 2);
            assert_eq!(pool.retrieved[0].parent_volume_id, "A");
            assert!((pool.retrieved[0].distance - 0.1).abs() < 1e-7);
            assert_eq!(pool.retrieved[1].parent_volume_id, "B");
            assert!((pool.retrieved[1].distance - 0.2).abs() < 1e-7);
        }

        #[test]
        fn empty_query_is_error() {
            let idx = slice_index(vec![(slice_key("A", 0), vec![0.0])], 1);
            let query = EmbeddingMatrix::new("q", 1, vec![]).unwrap();
            assert!(retrieve_slice_pool(&query, &idx, 20).is_err());
        }

        #[test]
        fn parent_id_survives_hash_in_volume_id() {
            let key = slice_key("odd#id", 7);
            assert_eq!(parent_volume_id(&key), "odd#id");
        }
    }
}
