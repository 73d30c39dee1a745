//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use voxir::embedding::load_embeddings;
use voxir::error::{Error, Result};
use voxir::eval::{
    run_experiment, summary_csv, ExperimentOptions, IndexSet, MetricReport, RelevanceCriterion,
};
use voxir::index::{index_exists, load_index, save_index, IndexKind, StoredIndex};
use voxir::lesion::{
    classify_lesion_group, extract_lesion_records, lesion_group_from_mask, Connectivity,
    LesionRecord,
};
use voxir::manifest::{Dataset, LesionGroup, Split, VolumeEntry};
use voxir::multimodal::{
    caption_query, ensemble_interleave, CaptionRecord, EnsembleConfig, EnsembleFirst,
};
use voxir::ranking::{MethodSpec, RankedList};
use voxir::slice2d::{foreground_slices, slice_metrics};
use voxir::slice_retrieval::{
    build_slice_index, rank_volumes, retrieve_slice_pool, score_pool, ScoreMethod,
};
use voxir::synth::{synth_generate, SynthConfig};
use voxir::util::atomic_write;
use voxir::volume_retrieval::{build_volume_index, volume_search, PoolingMethod};

pub fn ingest(manifest_path: &Path, connectivity: &str) -> Result<()> {
    let connectivity: Connectivity = connectivity.parse()?;
    let dataset = Dataset::load(manifest_path)?;
    let manifest = &dataset.manifest;
    manifest.check_split_disjoint()?;

    for entry in &manifest.volumes {
        let matrix = dataset.load_slice_embeddings(entry)?;
        if matrix.is_empty() {
            return Err(Error::validation(format!(
                "volume \"{}\" has no slices",
                entry.volume_id
            )));
        }
        if entry.caption_embedding_path.is_some() {
            dataset.load_caption_embedding(entry)?;
        }
        let (stored_flag, stored_group) = entry.ground_truth()?;
        if let Some(mask) = dataset.load_lesion_mask(entry)? {
            let (flag, group) = lesion_group_from_mask(&mask, connectivity)?;
            if (flag, group) != (stored_flag, stored_group) {
                return Err(Error::validation(format!(
                    "volume \"{}\": stored ground truth ({stored_flag}, {stored_group}) \
                     does not match mask-derived ({flag}, {group})",
                    entry.volume_id
                )));
            }
        }
        if let Some(organ) = dataset.load_organ_mask(entry)? {
            if let Some(mask) = dataset.load_lesion_mask(entry)? {
                if organ.dims != mask.dims {
                    return Err(Error::validation(format!(
                        "volume \"{}\": organ mask dims {:?} do not match lesion mask dims {:?}",
                        entry.volume_id, organ.dims, mask.dims
                    )));
                }
            }
        }
    }

    let train = manifest.split_entries(Split::Train).count();
    let test = manifest.split_entries(Split::Test).count();
    println!(
        "ingest ok: dataset \"{}\", {} volumes ({train} train / {test} test), dim {}",
        manifest.dataset_name,
        manifest.volumes.len(),
        manifest.embedding_dim
    );
    Ok(())
}

pub fn build_index(
    manifest_path: &Path,
    mode: &str,
    pooling: Option<&str>,
    out: &Path,
) -> Result<()> {
    let dataset = Dataset::load(manifest_path)?;
    let stored = match mode {
        "slice" => {
            if pooling.is_some() {
                return Err(Error::validation("--pooling only applies to --mode volume"));
            }
            build_slice_index(&dataset)?
        }
        "volume" => {
            let pooling: PoolingMethod = pooling
                .ok_or_else(|| Error::validation("--mode volume requires --pooling"))?
                .parse()?;
            build_volume_index(&dataset, pooling)?
        }
        other => {
            return Err(Error::validation(format!(
                "--mode must be slice or volume, got \"{other}\""
            )));
        }
    };
    save_index(out, &stored)?;
    println!(
        "index {} written to {} ({} entries, dim {})",
        stored.kind,
        out.display(),
        stored.index.len(),
        stored.index.dim()
    );
    Ok(())
}

/// Lesion records of one volume. Without an organ mask the records keep the
/// manifest's declared organ tag (overlap fraction 0 means "not computed").
fn lesion_records_for(
    dataset: &Dataset,
    entry: &VolumeEntry,
    connectivity: Connectivity,
) -> Result<Option<Vec<LesionRecord>>> {
    let Some(mask) = dataset.load_lesion_mask(entry)? else {
        return Ok(None);
    };
    let organ_masks = match dataset.load_organ_mask(entry)? {
        Some(m) => vec![(entry.organ_tag.as_str().to_string(), m)],
        None => Vec::new(),
    };
    let mut records =
        extract_lesion_records(&entry.volume_id, &mask, &organ_masks, connectivity)?;
    if organ_masks.is_empty() {
        for r in &mut records {
            r.organ = entry.organ_tag.as_str().to_string();
        }
    }
    Ok(Some(records))
}

pub fn lesions(
    manifest_path: &Path,
    out: &Path,
    connectivity: &str,
    update_ground_truth: bool,
) -> Result<()> {
    let connectivity: Connectivity = connectivity.parse()?;
    let mut dataset = Dataset::load(manifest_path)?;

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut lesion_lines = String::new();
    let mut metric_lines = String::new();
    let mut updates: BTreeMap<String, (bool, LesionGroup)> = BTreeMap::new();
    let mut num_records = 0usize;
    let mut num_masked = 0usize;

    for entry in &dataset.manifest.volumes {
        let Some(records) = lesion_records_for(&dataset, entry, connectivity)? else {
            continue;
        };
        num_masked += 1;
        num_records += records.len();
        for r in &records {
            lesion_lines.push_str(&r.to_text_line());
            lesion_lines.push('\n');
        }

        let mask = dataset.load_lesion_mask(entry)?.expect("mask just loaded");
        for z in foreground_slices(&mask) {
            let m = slice_metrics(&mask, z, &entry.volume_id)?;
            metric_lines.push_str(&m.to_text_line());
            metric_lines.push('\n');
        }

        let group = classify_lesion_group(&records);
        updates.insert(entry.volume_id.clone(), (group != LesionGroup::G0, group));
    }

    atomic_write(&out.join("lesions.txt"), lesion_lines.as_bytes())?;
    atomic_write(&out.join("slice_metrics.txt"), metric_lines.as_bytes())?;

    if update_ground_truth {
        for entry in &mut dataset.manifest.volumes {
            if let Some(&(flag, group)) = updates.get(&entry.volume_id) {
                entry.set_ground_truth(flag, group);
            }
        }
        dataset.manifest.validate()?;
        dataset.save(manifest_path)?;
        println!(
            "updated ground truth for {num_masked} volumes in {}",
            manifest_path.display()
        );
    }
    println!(
        "{num_records} lesion records from {num_masked} masked volumes written to {}",
        out.display()
    );
    Ok(())
}

pub fn captions(manifest_path: &Path, out: &Path, connectivity: &str) -> Result<()> {
    let connectivity: Connectivity = connectivity.parse()?;
    let dataset = Dataset::load(manifest_path)?;

    let mut lines = String::new();
    for entry in &dataset.manifest.volumes {
        let (num_lesions, largest) = match lesion_records_for(&dataset, entry, connectivity)? {
            Some(records) => {
                let largest = records
                    .iter()
                    .map(|r| r.length_cm)
                    .fold(f64::NEG_INFINITY, f64::max);
                let n = records.len();
                (n, (n > 0).then_some(largest))
            }
            None => match entry.ground_truth()? {
                (false, _) => (0, None),
                (true, group) => {
                    return Err(Error::validation(format!(
                        "volume \"{}\" ({group}) has no lesion mask; captions need lesion \
                         count and length",
                        entry.volume_id
                    )));
                }
            },
        };
        let record = CaptionRecord::new(
            &entry.volume_id,
            entry.organ_tag.as_str(),
            num_lesions,
            largest,
        )?;
        lines.push_str(&record.to_text_line());
        lines.push('\n');
    }
    atomic_write(out, lines.as_bytes())?;
    println!(
        "{} caption records written to {}",
        dataset.manifest.volumes.len(),
        out.display()
    );
    Ok(())
}

pub struct QueryArgs {
    pub manifest: PathBuf,
    pub index_dir: PathBuf,
    pub method: String,
    pub k: usize,
    pub volume: Option<String>,
    pub caption_embedding: Option<PathBuf>,
    pub n_per_slice: usize,
    pub caption_n: usize,
    pub format: String,
}

fn load_index_for(dir: &Path, kind: IndexKind, method: MethodSpec) -> Result<StoredIndex> {
    if !index_exists(dir, kind) {
        return Err(Error::validation(format!(
            "no {kind} index in {} for method {method} (run build-index first)",
            dir.display()
        )));
    }
    load_index(dir, kind)
}

fn caption_vector(dataset: &Dataset, args: &QueryArgs) -> Result<Vec<f32>> {
    if let Some(path) = &args.caption_embedding {
        let matrix = load_embeddings(path)?;
        let row = matrix
            .rows()
            .first()
            .ok_or_else(|| Error::validation(format!("{} holds no rows", path.display())))?;
        return Ok(row.1.clone());
    }
    if let Some(volume_id) = &args.volume {
        let entry = dataset.manifest.entry(volume_id)?;
        return dataset.load_caption_embedding(entry);
    }
    Err(Error::validation(
        "caption queries need --caption-embedding or --volume",
    ))
}

fn slice_freq_list(
    dataset: &Dataset,
    slice_index: &StoredIndex,
    args: &QueryArgs,
) -> Result<RankedList> {
    let volume_id = args.volume.as_ref().ok_or_else(|| {
        Error::validation(format!("method {} requires --volume", args.method))
    })?;
    let entry = dataset.manifest.entry(volume_id)?;
    let matrix = dataset.load_slice_embeddings(entry)?;
    let pool = retrieve_slice_pool(&matrix, slice_index, args.n_per_slice)?;
    let scores = score_pool(&pool, ScoreMethod::Freq)?;
    rank_volumes(&scores, args.k)
}

pub fn query(args: &QueryArgs) -> Result<()> {
    let dataset = Dataset::load(&args.manifest)?;
    let method: MethodSpec = args.method.parse()?;

    let ranked = match method {
        MethodSpec::SliceFreq | MethodSpec::SliceMax | MethodSpec::SliceSum => {
            let score_method = match method {
                MethodSpec::SliceFreq => ScoreMethod::Freq,
                MethodSpec::SliceMax => ScoreMethod::MaxScore,
                _ => ScoreMethod::ScoreSum,
            };
            let volume_id = args
                .volume
                .as_ref()
                .ok_or_else(|| Error::validation(format!("method {method} requires --volume")))?;
            let entry = dataset.manifest.entry(volume_id)?;
            let matrix = dataset.load_slice_embeddings(entry)?;
            let index = load_index_for(&args.index_dir, IndexKind::Slice, method)?;
            let pool = retrieve_slice_pool(&matrix, &index, args.n_per_slice)?;
            let scores = score_pool(&pool, score_method)?;
            rank_volumes(&scores, args.k)?
        }
        MethodSpec::Volume(pooling) => {
            let volume_id = args
                .volume
                .as_ref()
                .ok_or_else(|| Error::validation(format!("method {method} requires --volume")))?;
            let entry = dataset.manifest.entry(volume_id)?;
            let matrix = dataset.load_slice_embeddings(entry)?;
            let index = load_index_for(&args.index_dir, IndexKind::Volume(pooling), method)?;
            volume_search(&index, &matrix, pooling, args.k)?
        }
        MethodSpec::Caption => {
            let embedding = caption_vector(&dataset, args)?;
            let index = load_index_for(&args.index_dir, IndexKind::Slice, method)?;
            caption_query(&embedding, &index, args.caption_n, args.k)?
        }
        MethodSpec::Ensemble => {
            let index = load_index_for(&args.index_dir, IndexKind::Slice, method)?;
            let embedding = caption_vector(&dataset, args)?;
            let captions = caption_query(&embedding, &index, args.caption_n, args.k)?;
            let freq = slice_freq_list(&dataset, &index, args)?;
            ensemble_interleave(&captions, &freq, EnsembleConfig::new(args.k))
        }
    };

    match args.format.as_str() {
        "csv" => print!("{}", ranked.to_csv()),
        "text" => print!("{}", ranked.to_text()),
        other => {
            return Err(Error::validation(format!(
                "--format must be csv or text, got \"{other}\""
            )));
        }
    }
    Ok(())
}

pub struct EvaluateArgs {
    pub manifest: PathBuf,
    pub index_dir: PathBuf,
    pub methods: String,
    pub criterion: String,
    pub k: String,
    pub ap_depth: Option<usize>,
    pub n_per_slice: usize,
    pub caption_n: usize,
    pub out: PathBuf,
}

fn parse_methods(spec: &str) -> Result<Vec<MethodSpec>> {
    if spec == "all" {
        return Ok(MethodSpec::ALL.to_vec());
    }
    spec.split(',').map(|s| s.trim().parse()).collect()
}

fn parse_k_list(spec: &str) -> Result<Vec<usize>> {
    let ks: Vec<usize> = spec
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::validation(format!("bad k value \"{s}\"")))
        })
        .collect::<Result<_>>()?;
    if ks.is_empty() || ks.iter().any(|&k| k == 0) {
        return Err(Error::validation("k values must be positive"));
    }
    Ok(ks)
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let dataset = Dataset::load(&args.manifest)?;
    let methods = parse_methods(&args.methods)?;
    let criterion: RelevanceCriterion = args.criterion.parse()?;
    let opts = ExperimentOptions {
        k_list: parse_k_list(&args.k)?,
        n_per_slice: args.n_per_slice,
        caption_n: args.caption_n,
        ap_depth: args.ap_depth,
        ensemble_first: EnsembleFirst::Caption,
    };

    // load every index the method list needs, naming the method when absent
    let mut indexes = IndexSet::default();
    for &method in &methods {
        match method {
            MethodSpec::Volume(pooling) => {
                if !indexes.volume.contains_key(&pooling) {
                    let idx =
                        load_index_for(&args.index_dir, IndexKind::Volume(pooling), method)?;
                    indexes.volume.insert(pooling, idx);
                }
            }
            _ => {
                if indexes.slice.is_none() {
                    indexes.slice =
                        Some(load_index_for(&args.index_dir, IndexKind::Slice, method)?);
                }
            }
        }
    }

    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut reports: Vec<MetricReport> = Vec::new();
    for &method in &methods {
        let report = run_experiment(&dataset, &indexes, method, criterion, &opts)?;
        atomic_write(
            &args.out.join(format!("{}.csv", method.name())),
            report.to_csv().as_bytes(),
        )?;
        atomic_write(
            &args.out.join(format!("{}.txt", method.name())),
            report.to_text().as_bytes(),
        )?;
        reports.push(report);
    }
    let summary = summary_csv(&reports, &opts.k_list);
    atomic_write(&args.out.join("summary.csv"), summary.as_bytes())?;
    print!("{summary}");
    Ok(())
}

pub fn stats(manifest_path: &Path, bin_width_cm: f64, out: &Path, connectivity: &str) -> Result<()> {
    let connectivity: Connectivity = connectivity.parse()?;
    let dataset = Dataset::load(manifest_path)?;
    let mut records = Vec::new();
    for entry in &dataset.manifest.volumes {
        if let Some(rs) = lesion_records_for(&dataset, entry, connectivity)? {
            records.extend(rs);
        }
    }
    let histogram = voxir::eval::lesion_size_histogram(&records, bin_width_cm)?;
    atomic_write(out, histogram.to_csv().as_bytes())?;
    println!(
        "histogram over {} lesion records written to {}",
        records.len(),
        out.display()
    );
    Ok(())
}

pub fn synth(out: &Path, config: SynthConfig) -> Result<()> {
    let dataset = synth_generate(&config, out)?;
    let train = dataset.manifest.split_entries(Split::Train).count();
    let test = dataset.manifest.split_entries(Split::Test).count();
    println!(
        "synthetic dataset \"{}\" with {} volumes ({train} train / {test} test) written to {}",
        dataset.manifest.dataset_name,
        dataset.manifest.volumes.len(),
        out.display()
    );
    Ok(())
}
