//! Command-line surface of the retrieval engine: ingest, index construction,
//! lesion extraction, caption generation, querying, evaluation, statistics
//! and synthetic dataset generation.
//!
//! Exit codes: 0 on success, 1 on validation errors, 2 on I/O and file
//! format errors.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(name = "voxir", version, about = "Content-based 3D medical image retrieval engine")]
struct Cli {
    /// Resolve all relative paths against this directory.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset: manifest invariants, every referenced file, and
    /// mask-derived ground truth.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        /// Voxel connectivity for lesion components (6 or 26).
        #[arg(long, default_value = "26")]
        connectivity: String,
    },

    /// Build and persist a slice or volume index over the train split.
    BuildIndex {
        #[arg(long)]
        manifest: PathBuf,
        /// Index mode: "slice" or "volume".
        #[arg(long)]
        mode: String,
        /// Pooling method for volume mode: median, max, average or std.
        #[arg(long)]
        pooling: Option<String>,
        /// Directory the index files are written to.
        #[arg(long)]
        out: PathBuf,
    },

    /// Extract lesion records and per-slice 2D metrics from label masks.
    Lesions {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory for lesions.txt and slice_metrics.txt.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "26")]
        connectivity: String,
        /// Recompute lesion_flag / lesion_group from masks and write them
        /// back into the manifest.
        #[arg(long)]
        update_ground_truth: bool,
    },

    /// Generate one deterministic caption record per volume.
    Captions {
        #[arg(long)]
        manifest: PathBuf,
        /// Output caption record file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "26")]
        connectivity: String,
    },

    /// Rank volumes for a query volume or caption embedding.
    Query {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory holding persisted indexes.
        #[arg(long)]
        index_dir: PathBuf,
        /// Retrieval method: slice-freq, slice-max, slice-sum,
        /// volume-{median,max,average,std}, caption, or ensemble.
        #[arg(long)]
        method: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Query volume id from the manifest.
        #[arg(long)]
        volume: Option<String>,
        /// EMB1 file holding a caption embedding (first row is used).
        #[arg(long)]
        caption_embedding: Option<PathBuf>,
        /// Slices retrieved per query slice.
        #[arg(long, default_value_t = 20)]
        n_per_slice: usize,
        /// Slices retrieved per caption query.
        #[arg(long, default_value_t = 20)]
        caption_n: usize,
        /// Output format: csv or text.
        #[arg(long, default_value = "csv")]
        format: String,
    },

    /// Evaluate retrieval methods over the test split and write reports.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        index_dir: PathBuf,
        /// Comma-separated method list, or "all".
        #[arg(long, default_value = "all")]
        methods: String,
        /// Relevance criterion: flag or group.
        #[arg(long)]
        criterion: String,
        /// Comma-separated precision cutoffs.
        #[arg(long, default_value = "3,5,10")]
        k: String,
        /// Truncate AP evaluation to this depth (default: full ranking).
        #[arg(long)]
        ap_depth: Option<usize>,
        #[arg(long, default_value_t = 20)]
        n_per_slice: usize,
        #[arg(long, default_value_t = 20)]
        caption_n: usize,
        /// Directory for per-method reports and summary.csv.
        #[arg(long)]
        out: PathBuf,
    },

    /// Write the per-organ histogram of largest-lesion sizes.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        bin_width_cm: f64,
        /// Output histogram CSV file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "26")]
        connectivity: String,
    },

    /// Generate a synthetic planted-cluster dataset.
    Synth {
        /// Dataset output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        num_groups: usize,
        #[arg(long, default_value_t = 20)]
        volumes_per_group: usize,
        #[arg(long, default_value_t = 40)]
        slices_per_volume: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 10.0)]
        separation: f64,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        /// Also rasterize lesion and organ masks per volume.
        #[arg(long)]
        with_masks: bool,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };

    if let Err(e) = setup(&cli).and_then(|()| run(cli)) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn setup(cli: &Cli) -> voxir::Result<()> {
    if let Some(dir) = &cli.workdir {
        std::env::set_current_dir(dir).map_err(|e| voxir::Error::io(dir, e))?;
    }
    if let Ok(threads) = std::env::var("THREADS") {
        let n: usize = threads.parse().map_err(|_| {
            voxir::Error::validation(format!("THREADS must be a positive integer, got \"{threads}\""))
        })?;
        if n == 0 {
            return Err(voxir::Error::validation("THREADS must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| voxir::Error::validation(format!("cannot configure thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> voxir::Result<()> {
    match cli.command {
        Command::Ingest {
            manifest,
            connectivity,
        } => commands::ingest(&manifest, &connectivity),
        Command::BuildIndex {
            manifest,
            mode,
            pooling,
            out,
        } => commands::build_index(&manifest, &mode, pooling.as_deref(), &out),
        Command::Lesions {
            manifest,
            out,
            connectivity,
            update_ground_truth,
        } => commands::lesions(&manifest, &out, &connectivity, update_ground_truth),
        Command::Captions {
            manifest,
            out,
            connectivity,
        } => commands::captions(&manifest, &out, &connectivity),
        Command::Query {
            manifest,
            index_dir,
            method,
            k,
            volume,
            caption_embedding,
            n_per_slice,
            caption_n,
            format,
        } => commands::query(&commands::QueryArgs {
            manifest,
            index_dir,
            method,
            k,
            volume,
            caption_embedding,
            n_per_slice,
            caption_n,
            format,
        }),
        Command::Evaluate {
            manifest,
            index_dir,
            methods,
            criterion,
            k,
            ap_depth,
            n_per_slice,
            caption_n,
            out,
        } => commands::evaluate(&commands::EvaluateArgs {
            manifest,
            index_dir,
            methods,
            criterion,
            k,
            ap_depth,
            n_per_slice,
            caption_n,
            out,
        }),
        Command::Stats {
            manifest,
            bin_width_cm,
            out,
            connectivity,
        } => commands::stats(&manifest, bin_width_cm, &out, &connectivity),
        Command::Synth {
            out,
            seed,
            num_groups,
            volumes_per_group,
            slices_per_volume,
            dim,
            separation,
            sigma,
            with_masks,
        } => commands::synth(
            &out,
            voxir::synth::SynthConfig {
                num_groups,
                volumes_per_group,
                slices_per_volume,
                dim,
                cluster_separation: separation,
                noise_sigma: sigma,
                seed,
                with_masks,
            },
        ),
    }
}
