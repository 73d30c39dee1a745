//! Dataset manifests: the declarative description binding volume ids to
//! embedding files, masks, splits and ground-truth labels.
//!
//! Manifests are TOML documents. Top level: `dataset_name`, `embedding_dim`
//! and a `[[volumes]]` array of tables with the [`VolumeEntry`] fields.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::{load_embeddings, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::labelvol::{load_label_volume, raw_path_for, LabelVolume};
use crate::util::{atomic_write, read_text};

/// Anatomy a volume was curated for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrganTag {
    Liver,
    Colon,
    Pancreas,
    Lung,
    Other,
}

impl OrganTag {
    pub fn as_str(self) -> &'static str {
        match self {
            OrganTag::Liver => "liver",
            OrganTag::Colon => "colon",
            OrganTag::Pancreas => "pancreas",
            OrganTag::Lung => "lung",
            OrganTag::Other => "other",
        }
    }
}

/// Index membership: train volumes are indexed, test volumes query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Coarse per-volume lesion class. G0 means no lesion; G1 a single lesion
/// under 2 cm; G2 a single larger lesion or several none above 5 cm; G3 a
/// largest lesion above 5 cm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LesionGroup {
    G0,
    G1,
    G2,
    G3,
}

impl LesionGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            LesionGroup::G0 => "G0",
            LesionGroup::G1 => "G1",
            LesionGroup::G2 => "G2",
            LesionGroup::G3 => "G3",
        }
    }
}

impl std::fmt::Display for LesionGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One volume of a dataset.
///
/// The ground-truth labels (`lesion_flag`, `lesion_group`) may be absent in
/// a freshly ingested manifest; the lesion pipeline can recompute them from
/// masks and write them back. Operations that need them fail with a
/// validation error while they are missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeEntry {
    pub volume_id: String,
    pub organ_tag: OrganTag,
    pub split: Split,
    pub slice_embeddings_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lesion_mask_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub organ_mask_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption_embedding_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lesion_flag: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lesion_group: Option<LesionGroup>,
}

impl VolumeEntry {
    /// The stored ground truth, or a validation error naming the volume.
    pub fn ground_truth(&self) -> Result<(bool, LesionGroup)> {
        match (self.lesion_flag, self.lesion_group) {
            (Some(flag), Some(group)) => Ok((flag, group)),
            _ => Err(Error::validation(format!(
                "volume \"{}\" lacks ground-truth labels (lesion_flag / lesion_group)",
                self.volume_id
            ))),
        }
    }

    pub fn set_ground_truth(&mut self, flag: bool, group: LesionGroup) {
        self.lesion_flag = Some(flag);
        self.lesion_group = Some(group);
    }
}

/// Declarative description of a whole dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_name: String,
    pub embedding_dim: usize,
    #[serde(default)]
    pub volumes: Vec<VolumeEntry>,
}

impl DatasetManifest {
    /// Check all manifest invariants: positive dim, unique ids, labels
    /// stored as a pair, and `lesion_flag == (lesion_group != G0)` on every
    /// labeled entry.
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::validation("embedding_dim must be positive"));
        }
        let mut seen = BTreeSet::new();
        for entry in &self.volumes {
            if !seen.insert(entry.volume_id.as_str()) {
                return Err(Error::validation(format!(
                    "duplicate volume_id \"{}\"",
                    entry.volume_id
                )));
            }
            match (entry.lesion_flag, entry.lesion_group) {
                (Some(flag), Some(group)) => {
                    if flag != (group != LesionGroup::G0) {
                        return Err(Error::validation(format!(
                            "volume \"{}\": lesion_flag={flag} inconsistent with lesion_group={group}",
                            entry.volume_id
                        )));
                    }
                }
                (None, None) => {}
                _ => {
                    return Err(Error::validation(format!(
                        "volume \"{}\": lesion_flag and lesion_group must be stored together",
                        entry.volume_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn entry(&self, volume_id: &str) -> Result<&VolumeEntry> {
        self.volumes
            .iter()
            .find(|e| e.volume_id == volume_id)
            .ok_or_else(|| Error::validation(format!("unknown volume id \"{volume_id}\"")))
    }

    pub fn split_entries(&self, split: Split) -> impl Iterator<Item = &VolumeEntry> {
        self.volumes.iter().filter(move |e| e.split == split)
    }

    /// Train and test id sets must be disjoint (ids are globally unique, but
    /// manifests built programmatically can violate that).
    pub fn check_split_disjoint(&self) -> Result<()> {
        let train: BTreeSet<&str> = self
            .split_entries(Split::Train)
            .map(|e| e.volume_id.as_str())
            .collect();
        for e in self.split_entries(Split::Test) {
            if train.contains(e.volume_id.as_str()) {
                return Err(Error::validation(format!(
                    "split leakage: volume \"{}\" appears in both train and test",
                    e.volume_id
                )));
            }
        }
        Ok(())
    }
}

/// Parse and validate a manifest document.
pub fn parse_manifest(text: &str) -> Result<DatasetManifest> {
    let manifest: DatasetManifest = toml::from_str(text)
        .map_err(|e| Error::parse("<manifest>", e.to_string()))?;
    manifest.validate()?;
    Ok(manifest)
}

/// Serialize a manifest; `parse_manifest` accepts the output unchanged.
pub fn serialize_manifest(manifest: &DatasetManifest) -> Result<String> {
    toml::to_string(manifest).map_err(|e| Error::parse("<manifest>", e.to_string()))
}

/// A manifest anchored to the directory its file lives in. Relative paths
/// inside entries resolve against that directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
}

impl Dataset {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let text = read_text(manifest_path)?;
        let manifest = toml::from_str::<DatasetManifest>(&text)
            .map_err(|e| Error::parse(manifest_path, e.to_string()))?;
        manifest.validate()?;
        let root = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Self { manifest, root })
    }

    pub fn from_parts(manifest: DatasetManifest, root: impl Into<PathBuf>) -> Self {
        Self {
            manifest,
            root: root.into(),
        }
    }

    pub fn save(&self, manifest_path: &Path) -> Result<()> {
        let text = serialize_manifest(&self.manifest)?;
        atomic_write(manifest_path, text.as_bytes())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.root.join(path)
        }
    }

    /// Load a volume's slice embeddings, checking the dataset dimension.
    pub fn load_slice_embeddings(&self, entry: &VolumeEntry) -> Result<EmbeddingMatrix> {
        let path = self.resolve(&entry.slice_embeddings_path);
        let matrix = load_embeddings(&path)?.with_volume_id(&entry.volume_id);
        if matrix.dim() != self.manifest.embedding_dim {
            return Err(Error::validation(format!(
                "volume \"{}\" has embedding dim {} but the dataset declares {}",
                entry.volume_id,
                matrix.dim(),
                self.manifest.embedding_dim
            )));
        }
        Ok(matrix)
    }

    /// Load the caption embedding vector for an entry, when present.
    pub fn load_caption_embedding(&self, entry: &VolumeEntry) -> Result<Vec<f32>> {
        let rel = entry.caption_embedding_path.as_ref().ok_or_else(|| {
            Error::validation(format!(
                "volume \"{}\" has no caption_embedding_path",
                entry.volume_id
            ))
        })?;
        let path = self.resolve(rel);
        let matrix = load_embeddings(&path)?;
        if matrix.dim() != self.manifest.embedding_dim {
            return Err(Error::validation(format!(
                "caption embedding for \"{}\" has dim {} but the dataset declares {}",
                entry.volume_id,
                matrix.dim(),
                self.manifest.embedding_dim
            )));
        }
        let row = matrix.rows().first().ok_or_else(|| {
            Error::validation(format!(
                "caption embedding file for \"{}\" is empty",
                entry.volume_id
            ))
        })?;
        Ok(row.1.clone())
    }

    pub fn load_lesion_mask(&self, entry: &VolumeEntry) -> Result<Option<LabelVolume>> {
        match &entry.lesion_mask_path {
            None => Ok(None),
            Some(rel) => {
                let hdr = self.resolve(rel);
                let raw = raw_path_for(&hdr);
                Ok(Some(load_label_volume(&hdr, &raw)?))
            }
        }
    }

    pub fn load_organ_mask(&self, entry: &VolumeEntry) -> Result<Option<LabelVolume>> {
        match &entry.organ_mask_path {
            None => Ok(None),
            Some(rel) => {
                let hdr = self.resolve(rel);
                let raw = raw_path_for(&hdr);
                Ok(Some(load_label_volume(&hdr, &raw)?))
            }
        }
    }
}
