//! Evaluation harness: lesion-flag and lesion-group relevance judging, P@k
//! and Average Precision, macro-averaged experiment runs over the test
//! split, and lesion-size histograms.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::index::StoredIndex;
use crate::lesion::LesionRecord;
use crate::manifest::{Dataset, Split, VolumeEntry};
use crate::multimodal::{caption_query, ensemble_interleave, EnsembleConfig, EnsembleFirst};
use crate::ranking::{MethodSpec, RankedList};
use crate::slice_retrieval::{
    build_slice_index, rank_volumes, retrieve_slice_pool, score_pool, ScoreMethod,
};
use crate::volume_retrieval::{build_volume_index, volume_search, PoolingMethod};

/// How a retrieved volume counts as relevant to a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelevanceCriterion {
    /// Same lesion flag.
    Flag,
    /// Same lesion group.
    Group,
}

impl RelevanceCriterion {
    pub fn as_str(self) -> &'static str {
        match self {
            RelevanceCriterion::Flag => "flag",
            RelevanceCriterion::Group => "group",
        }
    }

    fn matches(self, query: &VolumeEntry, candidate: &VolumeEntry) -> Result<bool> {
        let (q_flag, q_group) = query.ground_truth()?;
        let (c_flag, c_group) = candidate.ground_truth()?;
        Ok(match self {
            RelevanceCriterion::Flag => q_flag == c_flag,
            RelevanceCriterion::Group => q_group == c_group,
        })
    }
}

impl std::fmt::Display for RelevanceCriterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RelevanceCriterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flag" => Ok(RelevanceCriterion::Flag),
            "group" => Ok(RelevanceCriterion::Group),
            other => Err(Error::validation(format!(
                "criterion must be flag or group, got \"{other}\""
            ))),
        }
    }
}

/// Fraction of relevant items among the first k ranks. Lists shorter than k
/// are not renormalized: missing slots count as irrelevant.
pub fn precision_at_k(
    ranked: &RankedList,
    is_relevant: impl Fn(&str) -> bool,
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::validation("precision k must be positive"));
    }
    let hits = ranked
        .entries
        .iter()
        .take(k)
        .filter(|e| is_relevant(&e.volume_id))
        .count();
    Ok(hits as f64 / k as f64)
}

/// Average precision over the whole evaluated list:
/// `AP = sum_n (R_n - R_{n-1}) * P_n` with recall against
/// `total_relevant_in_index`.
pub fn average_precision(
    ranked: &RankedList,
    is_relevant: impl Fn(&str) -> bool,
    total_relevant_in_index: usize,
) -> Result<f64> {
    average_precision_truncated(ranked, is_relevant, total_relevant_in_index, None)
}

/// [`average_precision`] evaluated on the first `depth` ranks only (None
/// means the full list); the recall denominator stays the corpus total.
pub fn average_precision_truncated(
    ranked: &RankedList,
    is_relevant: impl Fn(&str) -> bool,
    total_relevant_in_index: usize,
    depth: Option<usize>,
) -> Result<f64> {
    if total_relevant_in_index == 0 {
        return Err(Error::validation(
            "average precision undefined: no relevant volume in the index",
        ));
    }
    let depth = depth.unwrap_or(ranked.entries.len());
    let mut relevant_so_far = 0usize;
    let mut prev_recall = 0.0f64;
    let mut ap = 0.0f64;
    // recall deltas telescope, so a perfect ranking that retrieves every
    // relevant volume sums to exactly 1.0
    for (i, e) in ranked.entries.iter().take(depth).enumerate() {
        if is_relevant(&e.volume_id) {
            relevant_so_far += 1;
            let recall = relevant_so_far as f64 / total_relevant_in_index as f64;
            let precision = relevant_so_far as f64 / (i + 1) as f64;
            ap += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
    }
    Ok(ap)
}

/// Per-query metric values.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryMetrics {
    pub query_id: String,
    pub p_at: BTreeMap<usize, f64>,
    pub ap: f64,
}

/// One method's evaluation over every test query.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub method: String,
    pub criterion: RelevanceCriterion,
    pub per_query: Vec<QueryMetrics>,
    /// Arithmetic means over queries, keyed "P@k" and "AP".
    pub macro_means: BTreeMap<String, f64>,
    pub num_queries: usize,
}

impl MetricReport {
    /// Macro rows as CSV: `method,criterion,metric,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,criterion,metric,value\n");
        for (metric, value) in &self.macro_means {
            out.push_str(&format!(
                "{},{},{},{:.6}\n",
                self.method, self.criterion, metric, value
            ));
        }
        out
    }

    /// Full structured-text report: one line per query plus the macro line.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "method={} criterion={} num_queries={}\n",
            self.method, self.criterion, self.num_queries
        );
        for q in &self.per_query {
            let mut line = format!("query={}", q.query_id);
            for (k, v) in &q.p_at {
                line.push_str(&format!(" P@{k}={v:.6}"));
            }
            line.push_str(&format!(" AP={:.6}", q.ap));
            out.push_str(&line);
            out.push('\n');
        }
        let mut line = String::from("macro:");
        for (metric, value) in &self.macro_means {
            line.push_str(&format!(" {metric}={value:.6}"));
        }
        out.push_str(&line);
        out.push('\n');
        out
    }
}

/// Summary table over several reports: rows are methods, columns the
/// macro metrics.
pub fn summary_csv(reports: &[MetricReport], k_list: &[usize]) -> String {
    let mut header = String::from("method,criterion");
    for k in k_list {
        header.push_str(&format!(",P@{k}"));
    }
    header.push_str(",AP\n");
    let mut out = header;
    for r in reports {
        let mut row = format!("{},{}", r.method, r.criterion);
        for k in k_list {
            let v = r.macro_means.get(&format!("P@{k}")).copied().unwrap_or(0.0);
            row.push_str(&format!(",{v:.6}"));
        }
        let ap = r.macro_means.get("AP").copied().unwrap_or(0.0);
        row.push_str(&format!(",{ap:.6}\n"));
        out.push_str(&row);
    }
    out
}

/// The train-split indexes an experiment may need.
#[derive(Debug, Default)]
pub struct IndexSet {
    pub slice: Option<StoredIndex>,
    pub volume: BTreeMap<PoolingMethod, StoredIndex>,
}

impl IndexSet {
    /// Build in memory exactly the indexes `methods` require.
    pub fn build_for(dataset: &Dataset, methods: &[MethodSpec]) -> Result<Self> {
        let mut set = IndexSet::default();
        for &m in methods {
            match m {
                MethodSpec::SliceFreq
                | MethodSpec::SliceMax
                | MethodSpec::SliceSum
                | MethodSpec::Caption
                | MethodSpec::Ensemble => {
                    if set.slice.is_none() {
                        set.slice = Some(build_slice_index(dataset)?);
                    }
                }
                MethodSpec::Volume(p) => {
                    if !set.volume.contains_key(&p) {
                        set.volume.insert(p, build_volume_index(dataset, p)?);
                    }
                }
            }
        }
        Ok(set)
    }

    fn slice_index(&self, method: MethodSpec) -> Result<&StoredIndex> {
        self.slice
            .as_ref()
            .ok_or_else(|| Error::validation(format!("missing slice index for method {method}")))
    }

    fn volume_index(&self, pooling: PoolingMethod) -> Result<&StoredIndex> {
        self.volume.get(&pooling).ok_or_else(|| {
            Error::validation(format!("missing index for method volume-{pooling}"))
        })
    }
}

/// Knobs of an experiment run.
#[derive(Debug, Clone)]
pub struct ExperimentOptions {
    pub k_list: Vec<usize>,
    /// Slices retrieved per query slice.
    pub n_per_slice: usize,
    /// Slices retrieved per caption query.
    pub caption_n: usize,
    /// AP evaluation depth; None ranks the full train index.
    pub ap_depth: Option<usize>,
    pub ensemble_first: EnsembleFirst,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            k_list: vec![3, 5, 10],
            n_per_slice: crate::slice_retrieval::DEFAULT_N_PER_SLICE,
            caption_n: crate::slice_retrieval::DEFAULT_N_PER_SLICE,
            ap_depth: None,
            ensemble_first: EnsembleFirst::Caption,
        }
    }
}

/// Rank all train volumes for one test query under `method`.
pub fn rank_for_query(
    dataset: &Dataset,
    indexes: &IndexSet,
    method: MethodSpec,
    query: &VolumeEntry,
    k: usize,
    opts: &ExperimentOptions,
) -> Result<RankedList> {
    match method {
        MethodSpec::SliceFreq | MethodSpec::SliceMax | MethodSpec::SliceSum => {
            let score_method = match method {
                MethodSpec::SliceFreq => ScoreMethod::Freq,
                MethodSpec::SliceMax => ScoreMethod::MaxScore,
                _ => ScoreMethod::ScoreSum,
            };
            let matrix = dataset.load_slice_embeddings(query)?;
            let pool = retrieve_slice_pool(&matrix, indexes.slice_index(method)?, opts.n_per_slice)?;
            let scores = score_pool(&pool, score_method)?;
            rank_volumes(&scores, k)
        }
        MethodSpec::Volume(pooling) => {
            let matrix = dataset.load_slice_embeddings(query)?;
            volume_search(indexes.volume_index(pooling)?, &matrix, pooling, k)
        }
        MethodSpec::Caption => {
            let embedding = dataset.load_caption_embedding(query)?;
            caption_query(&embedding, indexes.slice_index(method)?, opts.caption_n, k)
        }
        MethodSpec::Ensemble => {
            let embedding = dataset.load_caption_embedding(query)?;
            let slice_index = indexes.slice_index(method)?;
            let captions = caption_query(&embedding, slice_index, opts.caption_n, k)?;
            let matrix = dataset.load_slice_embeddings(query)?;
            let pool = retrieve_slice_pool(&matrix, slice_index, opts.n_per_slice)?;
            let scores = score_pool(&pool, ScoreMethod::Freq)?;
            let freq = rank_volumes(&scores, k)?;
            Ok(ensemble_interleave(
                &captions,
                &freq,
                EnsembleConfig {
                    first: opts.ensemble_first,
                    k,
                },
            ))
        }
    }
}

fn check_no_leakage(dataset: &Dataset, indexes: &IndexSet) -> Result<()> {
    dataset.manifest.check_split_disjoint()?;
    let test_ids: BTreeSet<&str> = dataset
        .manifest
        .split_entries(Split::Test)
        .map(|e| e.volume_id.as_str())
        .collect();
    if let Some(slice) = &indexes.slice {
        for key in slice.index.keys() {
            let parent = crate::slice_retrieval::parent_volume_id(key);
            if test_ids.contains(parent) {
                return Err(Error::validation(format!(
                    "split leakage: test volume \"{parent}\" has slices in the train index"
                )));
            }
        }
    }
    for stored in indexes.volume.values() {
        for key in stored.index.keys() {
            if test_ids.contains(key) {
                return Err(Error::validation(format!(
                    "split leakage: test volume \"{key}\" is in a train volume index"
                )));
            }
        }
    }
    Ok(())
}

/// Evaluate one method against one relevance criterion: every test volume
/// queries the train-built indexes, the full train ranking is judged, and
/// P@k plus AP are macro-averaged over queries (ordered by query id).
pub fn run_experiment(
    dataset: &Dataset,
    indexes: &IndexSet,
    method: MethodSpec,
    criterion: RelevanceCriterion,
    opts: &ExperimentOptions,
) -> Result<MetricReport> {
    dataset.manifest.validate()?;
    check_no_leakage(dataset, indexes)?;

    let train: Vec<&VolumeEntry> = dataset.manifest.split_entries(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::validation("train split is empty"));
    }
    let mut queries: Vec<&VolumeEntry> = dataset.manifest.split_entries(Split::Test).collect();
    if queries.is_empty() {
        return Err(Error::validation("test split is empty"));
    }
    queries.sort_by(|a, b| a.volume_id.cmp(&b.volume_id));

    let train_by_id: BTreeMap<&str, &VolumeEntry> =
        train.iter().map(|e| (e.volume_id.as_str(), *e)).collect();

    let mut per_query = Vec::with_capacity(queries.len());
    for query in &queries {
        let ranked = rank_for_query(dataset, indexes, method, query, train.len(), opts)?;
        // resolve relevance for every train candidate up front so missing
        // ground truth surfaces as an error, not a silent miss
        let mut relevant_ids: BTreeSet<&str> = BTreeSet::new();
        for candidate in &train {
            if criterion.matches(query, candidate)? {
                relevant_ids.insert(candidate.volume_id.as_str());
            }
        }
        let is_relevant = |candidate_id: &str| -> bool {
            train_by_id.contains_key(candidate_id) && relevant_ids.contains(candidate_id)
        };
        let total_relevant = relevant_ids.len();
        if total_relevant == 0 {
            return Err(Error::validation(format!(
                "query \"{}\" has no relevant volume in the train index under criterion {criterion}",
                query.volume_id
            )));
        }
        let mut p_at = BTreeMap::new();
        for &k in &opts.k_list {
            p_at.insert(k, precision_at_k(&ranked, is_relevant, k)?);
        }
        let ap = average_precision_truncated(&ranked, is_relevant, total_relevant, opts.ap_depth)?;
        per_query.push(QueryMetrics {
            query_id: query.volume_id.clone(),
            p_at,
            ap,
        });
    }

    let n = per_query.len() as f64;
    let mut macro_means = BTreeMap::new();
    for &k in &opts.k_list {
        let mean = per_query.iter().map(|q| q.p_at[&k]).sum::<f64>() / n;
        macro_means.insert(format!("P@{k}"), mean);
    }
    macro_means.insert(
        "AP".to_string(),
        per_query.iter().map(|q| q.ap).sum::<f64>() / n,
    );

    Ok(MetricReport {
        method: method.name(),
        criterion,
        num_queries: per_query.len(),
        per_query,
        macro_means,
    })
}

/// Per-organ histogram of largest-lesion lengths; one sample per
/// (volume, organ) pair, fixed-width bins starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeHistogram {
    pub bin_width_cm: f64,
    /// organ -> bin index -> count
    pub per_organ: BTreeMap<String, BTreeMap<usize, usize>>,
}

impl SizeHistogram {
    /// CSV rows `organ,bin_low_cm,bin_high_cm,count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("organ,bin_low_cm,bin_high_cm,count\n");
        for (organ, bins) in &self.per_organ {
            for (&bin, &count) in bins {
                let low = bin as f64 * self.bin_width_cm;
                let high = (bin + 1) as f64 * self.bin_width_cm;
                out.push_str(&format!("{organ},{low:.2},{high:.2},{count}\n"));
            }
        }
        out
    }
}

/// Bin the size distribution of largest lesions across organs.
pub fn lesion_size_histogram(records: &[LesionRecord], bin_width_cm: f64) -> Result<SizeHistogram> {
    if !(bin_width_cm > 0.0) {
        return Err(Error::validation("bin width must be positive"));
    }
    // largest lesion per (volume, organ)
    let mut largest: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for r in records {
        let key = (r.volume_id.as_str(), r.organ.as_str());
        let entry = largest.entry(key).or_insert(0.0);
        *entry = entry.max(r.length_cm);
    }
    let mut per_organ: BTreeMap<String, BTreeMap<usize, usize>> = BTreeMap::new();
    for ((_, organ), length) in largest {
        let bin = (length / bin_width_cm).floor() as usize;
        *per_organ
            .entry(organ.to_string())
            .or_default()
            .entry(bin)
            .or_default() += 1;
    }
    Ok(SizeHistogram {
        bin_width_cm,
        per_organ,
    })
}
