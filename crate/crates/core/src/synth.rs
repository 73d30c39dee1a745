//! Synthetic planted-cluster dataset generation: a desk-scale corpus whose
//! group structure is separable by construction, used for deterministic
//! end-to-end acceptance runs.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::embedding::{write_embeddings, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::labelvol::{raw_path_for, write_label_volume, LabelVolume, VoxelDtype};
use crate::manifest::{Dataset, DatasetManifest, LesionGroup, OrganTag, Split, VolumeEntry};

/// Parameters of a synthetic dataset.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// Planted groups; group g maps to lesion group Gg (so at most 4).
    pub num_groups: usize,
    pub volumes_per_group: usize,
    pub slices_per_volume: usize,
    pub dim: usize,
    /// Distance of each cluster center from the origin along its own axis.
    /// Separation above 4x the noise sigma guarantees planted separability.
    pub cluster_separation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Also rasterize one ellipsoidal lesion mask (and an enclosing organ
    /// mask) per volume, sized to match its group.
    pub with_masks: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_groups: 3,
            volumes_per_group: 20,
            slices_per_volume: 40,
            dim: 32,
            cluster_separation: 10.0,
            noise_sigma: 0.1,
            seed: 42,
            with_masks: false,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.num_groups) {
            return Err(Error::validation(format!(
                "num_groups must be in [2, 4] (group g maps to lesion group Gg), got {}",
                self.num_groups
            )));
        }
        if self.volumes_per_group == 0 || self.slices_per_volume == 0 {
            return Err(Error::validation(
                "volumes_per_group and slices_per_volume must be positive",
            ));
        }
        if self.dim < self.num_groups {
            return Err(Error::validation(format!(
                "dim {} too small for {} mutually orthogonal cluster centers",
                self.dim, self.num_groups
            )));
        }
        if !(self.cluster_separation > 0.0) || !(self.noise_sigma > 0.0) {
            return Err(Error::validation(
                "cluster_separation and noise_sigma must be positive",
            ));
        }
        Ok(())
    }

    /// Center of group g: the g-th basis vector scaled by the separation.
    pub fn center(&self, group: usize) -> Vec<f32> {
        let mut c = vec![0.0f32; self.dim];
        c[group] = self.cluster_separation as f32;
        c
    }
}

fn lesion_group_of(group: usize) -> LesionGroup {
    match group {
        0 => LesionGroup::G0,
        1 => LesionGroup::G1,
        2 => LesionGroup::G2,
        _ => LesionGroup::G3,
    }
}

const ORGAN_CYCLE: [OrganTag; 4] = [
    OrganTag::Liver,
    OrganTag::Colon,
    OrganTag::Pancreas,
    OrganTag::Lung,
];

/// Lesion semi-axes (mm, at 1 mm spacing) and grid size per group; targets
/// sit well away from the 2 cm / 5 cm classification boundaries.
fn mask_shape(group: LesionGroup) -> (Option<(f64, f64, f64)>, usize) {
    match group {
        LesionGroup::G0 => (None, 24),
        LesionGroup::G1 => (Some((7.5, 5.5, 4.5)), 24),
        LesionGroup::G2 => (Some((15.0, 11.0, 9.0)), 40),
        LesionGroup::G3 => (Some((30.0, 22.0, 18.0)), 72),
    }
}

fn rasterize_centered_ellipsoid(
    semi_axes_mm: (f64, f64, f64),
    n: usize,
) -> Result<LabelVolume> {
    let mut vol = LabelVolume::zeros((n, n, n), (1.0, 1.0, 1.0), VoxelDtype::U8)?;
    let c = n as f64 / 2.0;
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let dx = (x as f64 + 0.5 - c) / semi_axes_mm.0;
                let dy = (y as f64 + 0.5 - c) / semi_axes_mm.1;
                let dz = (z as f64 + 0.5 - c) / semi_axes_mm.2;
                if dx * dx + dy * dy + dz * dz <= 1.0 {
                    vol.set(x, y, z, 1);
                }
            }
        }
    }
    Ok(vol)
}

/// Generate a synthetic dataset under `out_dir` and return it. The manifest
/// lands at `<out_dir>/manifest.toml` with relative paths; identical config
/// (including seed) produces byte-identical output.
pub fn synth_generate(config: &SynthConfig, out_dir: &Path) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0f64, config.noise_sigma)
        .map_err(|e| Error::validation(format!("bad noise sigma: {e}")))?;

    for sub in ["emb", "cap"] {
        std::fs::create_dir_all(out_dir.join(sub)).map_err(|e| Error::io(out_dir, e))?;
    }
    if config.with_masks {
        for sub in ["masks", "organs"] {
            std::fs::create_dir_all(out_dir.join(sub)).map_err(|e| Error::io(out_dir, e))?;
        }
    }

    let train_per_group = config.volumes_per_group * 4 / 5;
    let mut volumes = Vec::new();
    let mut ordinal = 0usize;

    for group in 0..config.num_groups {
        let lesion_group = lesion_group_of(group);
        let center = config.center(group);

        // seed-determined split: shuffle the group's volume slots, the
        // first 80% train
        let mut slots: Vec<usize> = (0..config.volumes_per_group).collect();
        for i in (1..slots.len()).rev() {
            let j = rand::Rng::random_range(&mut rng, 0..=i);
            slots.swap(i, j);
        }
        let mut split_of = vec![Split::Test; config.volumes_per_group];
        for &slot in slots.iter().take(train_per_group) {
            split_of[slot] = Split::Train;
        }

        for v in 0..config.volumes_per_group {
            let volume_id = format!("synth_g{group}_v{v:03}");
            let organ_tag = ORGAN_CYCLE[ordinal % ORGAN_CYCLE.len()];
            ordinal += 1;

            let mut rows = Vec::with_capacity(config.slices_per_volume);
            for s in 0..config.slices_per_volume {
                let vec: Vec<f32> = center
                    .iter()
                    .map(|&c| c + noise.sample(&mut rng) as f32)
                    .collect();
                rows.push((s as u32, vec));
            }
            let matrix = EmbeddingMatrix::new(&volume_id, config.dim, rows)?;
            let emb_rel = PathBuf::from(format!("emb/{volume_id}.emb"));
            write_embeddings(&out_dir.join(&emb_rel), &matrix)?;

            let cap_vec: Vec<f32> = center
                .iter()
                .map(|&c| c + noise.sample(&mut rng) as f32)
                .collect();
            let cap_matrix = EmbeddingMatrix::new(&volume_id, config.dim, vec![(0, cap_vec)])?;
            let cap_rel = PathBuf::from(format!("cap/{volume_id}.emb"));
            write_embeddings(&out_dir.join(&cap_rel), &cap_matrix)?;

            let lesion_mask_path = if config.with_masks {
                let (semi_axes, n) = mask_shape(lesion_group);
                let mask = match semi_axes {
                    Some(axes) => rasterize_centered_ellipsoid(axes, n)?,
                    None => LabelVolume::zeros((n, n, n), (1.0, 1.0, 1.0), VoxelDtype::U8)?,
                };
                let rel = PathBuf::from(format!("masks/{volume_id}.vhdr"));
                let hdr = out_dir.join(&rel);
                write_label_volume(&hdr, &raw_path_for(&hdr), &mask)?;

                // organ region: an ellipsoid comfortably enclosing the lesion
                let organ_semi = n as f64 / 2.0 - 1.0;
                let organ = rasterize_centered_ellipsoid((organ_semi, organ_semi, organ_semi), n)?;
                let organ_rel = PathBuf::from(format!("organs/{volume_id}.vhdr"));
                let organ_hdr = out_dir.join(&organ_rel);
                write_label_volume(&organ_hdr, &raw_path_for(&organ_hdr), &organ)?;
                Some((rel, organ_rel))
            } else {
                None
            };

            volumes.push(VolumeEntry {
                volume_id,
                organ_tag,
                split: split_of[v],
                slice_embeddings_path: emb_rel,
                lesion_mask_path: lesion_mask_path.as_ref().map(|(l, _)| l.clone()),
                organ_mask_path: lesion_mask_path.as_ref().map(|(_, o)| o.clone()),
                caption_embedding_path: Some(cap_rel),
                lesion_flag: Some(lesion_group != LesionGroup::G0),
                lesion_group: Some(lesion_group),
            });
        }
    }

    let manifest = DatasetManifest {
        dataset_name: format!("synth_seed{}", config.seed),
        embedding_dim: config.dim,
        volumes,
    };
    manifest.validate()?;
    let dataset = Dataset::from_parts(manifest, out_dir);
    dataset.save(&out_dir.join("manifest.toml"))?;
    Ok(dataset)
}
