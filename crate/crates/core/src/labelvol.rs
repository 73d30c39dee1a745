//! 3D label volumes: lesion masks and organ masks.
//!
//! A volume is stored as two files: a structured-text sidecar header with
//! keys `dims`, `spacing_mm` and `dtype`, plus a raw voxel file in
//! little-endian, x-fastest order. By convention the header carries a
//! `.vhdr` extension and the raw data lives next to it as `.vraw`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{atomic_write, read_file, read_text};

/// Voxel storage type of the raw file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VoxelDtype {
    #[serde(rename = "u8")]
    U8,
    #[serde(rename = "i16")]
    I16,
}

impl VoxelDtype {
    pub fn size(self) -> usize {
        match self {
            VoxelDtype::U8 => 1,
            VoxelDtype::I16 => 2,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct VolumeHeader {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    dtype: VoxelDtype,
}

/// A 3D voxel grid of integer labels with physical spacing.
///
/// Voxels are addressed x-fastest: `index = x + nx * (y + ny * z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    pub dims: (usize, usize, usize),
    pub spacing_mm: (f64, f64, f64),
    dtype: VoxelDtype,
    voxels: Vec<i16>,
}

impl LabelVolume {
    pub fn new(
        dims: (usize, usize, usize),
        spacing_mm: (f64, f64, f64),
        dtype: VoxelDtype,
        voxels: Vec<i16>,
    ) -> Result<Self> {
        let (nx, ny, nz) = dims;
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::validation(format!(
                "volume dims must be positive, got {dims:?}"
            )));
        }
        let (sx, sy, sz) = spacing_mm;
        if !(sx > 0.0 && sy > 0.0 && sz > 0.0) {
            return Err(Error::validation(format!(
                "spacing components must be positive, got {spacing_mm:?}"
            )));
        }
        if voxels.len() != nx * ny * nz {
            return Err(Error::validation(format!(
                "voxel count {} does not match dims {dims:?}",
                voxels.len()
            )));
        }
        if dtype == VoxelDtype::U8 && voxels.iter().any(|&v| !(0..=255).contains(&v)) {
            return Err(Error::validation("u8 volume with values outside [0, 255]"));
        }
        Ok(Self {
            dims,
            spacing_mm,
            dtype,
            voxels,
        })
    }

    /// All-zero volume.
    pub fn zeros(dims: (usize, usize, usize), spacing_mm: (f64, f64, f64), dtype: VoxelDtype) -> Result<Self> {
        let n = dims.0 * dims.1 * dims.2;
        Self::new(dims, spacing_mm, dtype, vec![0; n])
    }

    pub fn dtype(&self) -> VoxelDtype {
        self.dtype
    }

    pub fn voxels(&self) -> &[i16] {
        &self.voxels
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims.0 * (y + self.dims.1 * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> i16 {
        self.voxels[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: i16) {
        let i = self.index(x, y, z);
        self.voxels[i] = v;
    }

    pub fn num_voxels(&self) -> usize {
        self.voxels.len()
    }

    /// Physical volume of one voxel in mm^3.
    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing_mm.0 * self.spacing_mm.1 * self.spacing_mm.2
    }

    /// True when every voxel is 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.voxels.iter().all(|&v| v == 0 || v == 1)
    }
}

/// Raw path convention: the header's extension swapped for `vraw`.
pub fn raw_path_for(header_path: &Path) -> PathBuf {
    header_path.with_extension("vraw")
}

/// Load a volume from its header and raw files.
pub fn load_label_volume(header_path: &Path, raw_path: &Path) -> Result<LabelVolume> {
    let text = read_text(header_path)?;
    let header: VolumeHeader =
        toml::from_str(&text).map_err(|e| Error::parse(header_path, e.to_string()))?;
    let [nx, ny, nz] = header.dims;
    let n = nx
        .checked_mul(ny)
        .and_then(|v| v.checked_mul(nz))
        .ok_or_else(|| Error::parse(header_path, "dims overflow"))?;

    let bytes = read_file(raw_path)?;
    let expected = n * header.dtype.size();
    if bytes.len() != expected {
        return Err(Error::format(
            raw_path,
            format!(
                "raw file has {} bytes, dims {:?} with dtype size {} require {expected}",
                bytes.len(),
                header.dims,
                header.dtype.size()
            ),
        ));
    }

    let voxels: Vec<i16> = match header.dtype {
        VoxelDtype::U8 => bytes.iter().map(|&b| b as i16).collect(),
        VoxelDtype::I16 => bytes
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]))
            .collect(),
    };

    LabelVolume::new(
        (nx, ny, nz),
        (header.spacing_mm[0], header.spacing_mm[1], header.spacing_mm[2]),
        header.dtype,
        voxels,
    )
}

/// Write a volume's header and raw files (both atomic).
pub fn write_label_volume(header_path: &Path, raw_path: &Path, vol: &LabelVolume) -> Result<()> {
    let header = VolumeHeader {
        dims: [vol.dims.0, vol.dims.1, vol.dims.2],
        spacing_mm: [vol.spacing_mm.0, vol.spacing_mm.1, vol.spacing_mm.2],
        dtype: vol.dtype,
    };
    let text = toml::to_string(&header)
        .map_err(|e| Error::parse(header_path, e.to_string()))?;
    atomic_write(header_path, text.as_bytes())?;

    let mut bytes = Vec::with_capacity(vol.voxels.len() * vol.dtype.size());
    match vol.dtype {
        VoxelDtype::U8 => {
            for &v in &vol.voxels {
                bytes.push(v as u8);
            }
        }
        VoxelDtype::I16 => {
            for &v in &vol.voxels {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    atomic_write(raw_path, &bytes)
}
