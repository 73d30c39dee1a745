//! 3D lesion pipeline: connected-component indexing of binary lesion masks,
//! physical morphology (volume, fitted ellipsoid, length), organ-overlap
//! mapping, and per-volume lesion-group classification.

use nalgebra::{Matrix3, SymmetricEigen};

use crate::error::{Error, Result};
use crate::labelvol::LabelVolume;
use crate::manifest::LesionGroup;

/// Voxel adjacency rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    /// Face neighbors only.
    Six,
    /// Face, edge and corner neighbors.
    TwentySix,
}

impl Connectivity {
    fn offsets(self) -> Vec<(i64, i64, i64)> {
        match self {
            Connectivity::Six => vec![(-1, 0, 0), (0, -1, 0), (0, 0, -1)],
            Connectivity::TwentySix => {
                // all neighbors that precede the current voxel in x-fastest
                // scan order
                let mut offs = Vec::with_capacity(13);
                for dz in -1..=0i64 {
                    for dy in -1..=1i64 {
                        for dx in -1..=1i64 {
                            if (dz, dy, dx) < (0, 0, 0) {
                                offs.push((dx, dy, dz));
                            }
                        }
                    }
                }
                offs
            }
        }
    }
}

impl std::str::FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "6" => Ok(Connectivity::Six),
            "26" => Ok(Connectivity::TwentySix),
            other => Err(Error::validation(format!(
                "connectivity must be 6 or 26, got \"{other}\""
            ))),
        }
    }
}

/// One connected lesion: its id and voxel coordinates in scan order.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionComponent {
    pub lesion_id: usize,
    pub voxel_coords: Vec<(usize, usize, usize)>,
}

impl LesionComponent {
    pub fn voxel_count(&self) -> usize {
        self.voxel_coords.len()
    }
}

struct DisjointSet {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            // path halving
            self.parent[x as usize] = self.parent[self.parent[x as usize] as usize];
            x = self.parent[x as usize];
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (big, small) = if self.size[ra as usize] >= self.size[rb as usize] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[small as usize] = big;
        self.size[big as usize] += self.size[small as usize];
    }
}

/// Partition the foreground of a binary mask into maximal connected
/// components (union-find over a single scan). Components come back ordered
/// by (voxel count descending, min-z, min-y, min-x) with ids 1..n.
pub fn connected_components(
    mask: &LabelVolume,
    connectivity: Connectivity,
) -> Result<Vec<LesionComponent>> {
    if !mask.is_binary() {
        return Err(Error::validation(
            "lesion mask must be binary (labels 0 and 1 only)",
        ));
    }
    let (nx, ny, nz) = mask.dims;
    let voxels = mask.voxels();

    // dense node ids for foreground voxels, u32::MAX elsewhere
    let mut node_of = vec![u32::MAX; voxels.len()];
    let mut n_fg = 0u32;
    for (i, &v) in voxels.iter().enumerate() {
        if v != 0 {
            node_of[i] = n_fg;
            n_fg += 1;
        }
    }
    if n_fg == 0 {
        return Ok(Vec::new());
    }

    let mut dsu = DisjointSet::new(n_fg as usize);
    let offsets = connectivity.offsets();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = mask.index(x, y, z);
                if node_of[i] == u32::MAX {
                    continue;
                }
                for &(dx, dy, dz) in &offsets {
                    let (px, py, pz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                    if px < 0 || py < 0 || pz < 0 {
                        continue;
                    }
                    let (px, py, pz) = (px as usize, py as usize, pz as usize);
                    if px >= nx || py >= ny || pz >= nz {
                        continue;
                    }
                    let j = mask.index(px, py, pz);
                    if node_of[j] != u32::MAX {
                        dsu.union(node_of[i], node_of[j]);
                    }
                }
            }
        }
    }

    // gather voxels per root in scan order
    let mut groups: std::collections::BTreeMap<u32, Vec<(usize, usize, usize)>> =
        std::collections::BTreeMap::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = mask.index(x, y, z);
                if node_of[i] != u32::MAX {
                    let root = dsu.find(node_of[i]);
                    groups.entry(root).or_default().push((x, y, z));
                }
            }
        }
    }

    let mut components: Vec<Vec<(usize, usize, usize)>> = groups.into_values().collect();
    components.sort_by_key(|coords| {
        let count = coords.len();
        let min_z = coords.iter().map(|c| c.2).min().unwrap();
        let min_y = coords.iter().map(|c| c.1).min().unwrap();
        let min_x = coords.iter().map(|c| c.0).min().unwrap();
        (std::cmp::Reverse(count), min_z, min_y, min_x)
    });
    Ok(components
        .into_iter()
        .enumerate()
        .map(|(i, voxel_coords)| LesionComponent {
            lesion_id: i + 1,
            voxel_coords,
        })
        .collect())
}

/// Physical shape descriptors of one lesion.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionMorphology {
    pub physical_volume_mm3: f64,
    pub centroid_mm: (f64, f64, f64),
    /// Full axis lengths of the fitted ellipsoid, a >= b >= c.
    pub ellipsoid_axes_mm: (f64, f64, f64),
    pub length_cm: f64,
}

/// Compute volume, centroid and fitted-ellipsoid axes for a component.
///
/// The ellipsoid comes from the covariance of physical voxel-center
/// coordinates: axis_i = 2 * sqrt(5 * lambda_i), which is exact for a
/// uniform solid ellipsoid. Eigenvalues of degenerate components (single
/// voxels, planes) are floored at (voxel edge / 2)^2 / 5 with the smallest
/// spacing component as the edge, so no axis collapses below one voxel edge.
pub fn lesion_morphology(
    component: &LesionComponent,
    spacing_mm: (f64, f64, f64),
) -> Result<LesionMorphology> {
    let coords = &component.voxel_coords;
    if coords.is_empty() {
        return Err(Error::validation("empty lesion component"));
    }
    let (sx, sy, sz) = spacing_mm;
    let n = coords.len() as f64;
    let physical_volume_mm3 = n * sx * sy * sz;

    // voxel centers in physical space
    let mut sum = [0.0f64; 3];
    for &(x, y, z) in coords {
        sum[0] += (x as f64 + 0.5) * sx;
        sum[1] += (y as f64 + 0.5) * sy;
        sum[2] += (z as f64 + 0.5) * sz;
    }
    let centroid = [sum[0] / n, sum[1] / n, sum[2] / n];

    let mut cov = [[0.0f64; 3]; 3];
    for &(x, y, z) in coords {
        let d = [
            (x as f64 + 0.5) * sx - centroid[0],
            (y as f64 + 0.5) * sy - centroid[1],
            (z as f64 + 0.5) * sz - centroid[2],
        ];
        for r in 0..3 {
            for c in 0..3 {
                cov[r][c] += d[r] * d[c];
            }
        }
    }
    for row in cov.iter_mut() {
        for v in row.iter_mut() {
            *v /= n;
        }
    }

    let m = Matrix3::new(
        cov[0][0], cov[0][1], cov[0][2], //
        cov[1][0], cov[1][1], cov[1][2], //
        cov[2][0], cov[2][1], cov[2][2],
    );
    let eigen = SymmetricEigen::new(m);
    let min_edge = sx.min(sy).min(sz);
    let floor = (min_edge / 2.0).powi(2) / 5.0;
    let mut lambdas: Vec<f64> = eigen.eigenvalues.iter().map(|&l| l.max(floor)).collect();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    let axes: Vec<f64> = lambdas.iter().map(|&l| 2.0 * (5.0 * l).sqrt()).collect();

    Ok(LesionMorphology {
        physical_volume_mm3,
        centroid_mm: (centroid[0], centroid[1], centroid[2]),
        ellipsoid_axes_mm: (axes[0], axes[1], axes[2]),
        length_cm: axes[0] / 10.0,
    })
}

/// Map a lesion to the organ it overlaps most. Fractions are
/// |lesion ∩ organ| / |lesion|; ties break by organ name ascending, and a
/// lesion outside every mask maps to ("unassigned", 0).
pub fn map_lesion_to_organ(
    component: &LesionComponent,
    mask_dims: (usize, usize, usize),
    organ_masks: &[(String, LabelVolume)],
) -> Result<(String, f64)> {
    for (name, organ) in organ_masks {
        if organ.dims != mask_dims {
            return Err(Error::validation(format!(
                "organ mask \"{name}\" dims {:?} do not match lesion mask dims {:?}",
                organ.dims, mask_dims
            )));
        }
    }
    let total = component.voxel_count() as f64;
    let mut best: Option<(&str, f64)> = None;
    for (name, organ) in organ_masks {
        let inter = component
            .voxel_coords
            .iter()
            .filter(|&&(x, y, z)| organ.get(x, y, z) != 0)
            .count();
        let fraction = inter as f64 / total;
        if fraction == 0.0 {
            continue;
        }
        let better = match best {
            None => true,
            Some((bname, bfrac)) => {
                fraction > bfrac || (fraction == bfrac && name.as_str() < bname)
            }
        };
        if better {
            best = Some((name.as_str(), fraction));
        }
    }
    Ok(match best {
        Some((name, fraction)) => (name.to_string(), fraction),
        None => ("unassigned".to_string(), 0.0),
    })
}

/// One fully described lesion.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionRecord {
    pub lesion_id: usize,
    pub volume_id: String,
    pub organ: String,
    pub organ_overlap_fraction: f64,
    pub voxel_count: usize,
    pub physical_volume_mm3: f64,
    pub centroid_mm: (f64, f64, f64),
    pub ellipsoid_axes_mm: (f64, f64, f64),
    pub length_cm: f64,
}

impl LesionRecord {
    /// Ratio of largest to middle axis.
    pub fn elongation(&self) -> f64 {
        self.ellipsoid_axes_mm.0 / self.ellipsoid_axes_mm.1
    }

    /// Ratio of middle to smallest axis.
    pub fn flatness(&self) -> f64 {
        self.ellipsoid_axes_mm.1 / self.ellipsoid_axes_mm.2
    }

    /// One structured-text record, field names as in the type definition.
    pub fn to_text_line(&self) -> String {
        format!(
            "lesion_id={} volume_id={} organ={} organ_overlap_fraction={:.6} voxel_count={} \
             physical_volume_mm3={:.6} centroid_mm=({:.6},{:.6},{:.6}) \
             ellipsoid_axes_mm=({:.6},{:.6},{:.6}) length_cm={:.6}",
            self.lesion_id,
            self.volume_id,
            self.organ,
            self.organ_overlap_fraction,
            self.voxel_count,
            self.physical_volume_mm3,
            self.centroid_mm.0,
            self.centroid_mm.1,
            self.centroid_mm.2,
            self.ellipsoid_axes_mm.0,
            self.ellipsoid_axes_mm.1,
            self.ellipsoid_axes_mm.2,
            self.length_cm,
        )
    }
}

/// Run the full 3D pipeline on one volume's lesion mask.
pub fn extract_lesion_records(
    volume_id: &str,
    mask: &LabelVolume,
    organ_masks: &[(String, LabelVolume)],
    connectivity: Connectivity,
) -> Result<Vec<LesionRecord>> {
    let components = connected_components(mask, connectivity)?;
    components
        .iter()
        .map(|component| {
            let morph = lesion_morphology(component, mask.spacing_mm)?;
            let (organ, organ_overlap_fraction) =
                map_lesion_to_organ(component, mask.dims, organ_masks)?;
            Ok(LesionRecord {
                lesion_id: component.lesion_id,
                volume_id: volume_id.to_string(),
                organ,
                organ_overlap_fraction,
                voxel_count: component.voxel_count(),
                physical_volume_mm3: morph.physical_volume_mm3,
                centroid_mm: morph.centroid_mm,
                ellipsoid_axes_mm: morph.ellipsoid_axes_mm,
                length_cm: morph.length_cm,
            })
        })
        .collect()
}

/// Classify a volume's lesions: G0 when none; G1 for a single lesion under
/// 2 cm; G3 when the largest exceeds 5 cm; G2 otherwise. Boundary lengths of
/// exactly 2 cm or 5 cm fall to G2.
pub fn classify_lesion_group(lesions: &[LesionRecord]) -> LesionGroup {
    classify_lengths(lesions.iter().map(|l| l.length_cm))
}

fn classify_lengths(lengths: impl Iterator<Item = f64>) -> LesionGroup {
    let mut count = 0usize;
    let mut max_len = 0.0f64;
    for len in lengths {
        count += 1;
        max_len = max_len.max(len);
    }
    if count == 0 {
        LesionGroup::G0
    } else if count == 1 && max_len < 2.0 {
        LesionGroup::G1
    } else if max_len > 5.0 {
        LesionGroup::G3
    } else {
        LesionGroup::G2
    }
}

/// Recompute the manifest ground truth (lesion_flag, lesion_group) from a
/// mask; the ingestion gate compares this against the stored values.
pub fn lesion_group_from_mask(
    mask: &LabelVolume,
    connectivity: Connectivity,
) -> Result<(bool, LesionGroup)> {
    let components = connected_components(mask, connectivity)?;
    let mut lengths = Vec::with_capacity(components.len());
    for c in &components {
        lengths.push(lesion_morphology(c, mask.spacing_mm)?.length_cm);
    }
    let group = classify_lengths(lengths.into_iter());
    Ok((group != LesionGroup::G0, group))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labelvol::VoxelDtype;
    use rand::{Rng, SeedableRng};

    fn mask_from_coords(
        dims: (usize, usize, usize),
        spacing: (f64, f64, f64),
        coords: &[(usize, usize, usize)],
    ) -> LabelVolume {
        let mut vol = LabelVolume::zeros(dims, spacing, VoxelDtype::U8).unwrap();
        for &(x, y, z) in coords {
            vol.set(x, y, z, 1);
        }
        vol
    }

    #[test]
    fn corner_touch_depends_on_connectivity() {
        let mask = mask_from_coords((2, 2, 2), (1.0, 1.0, 1.0), &[(0, 0, 0), (1, 1, 1)]);
        let c26 = connected_components(&mask, Connectivity::TwentySix).unwrap();
        assert_eq!(c26.len(), 1);
        let c6 = connected_components(&mask, Connectivity::Six).unwrap();
        assert_eq!(c6.len(), 2);
    }

    #[test]
    fn all_zero_mask_yields_no_components() {
        let mask = LabelVolume::zeros((3, 3, 3), (1.0, 1.0, 1.0), VoxelDtype::U8).unwrap();
        assert!(connected_components(&mask, Connectivity::TwentySix)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn non_binary_mask_rejected() {
        let mut mask = LabelVolume::zeros((2, 1, 1), (1.0, 1.0, 1.0), VoxelDtype::I16).unwrap();
        mask.set(0, 0, 0, 3);
        assert!(connected_components(&mask, Connectivity::TwentySix).is_err());
    }

    #[test]
    fn components_ordered_by_size() {
        // disjoint axis-aligned blobs of sizes 10, 5, 1
        let mut coords = Vec::new();
        for i in 0..10 {
            coords.push((i, 0, 0));
        }
        for i in 0..5 {
            coords.push((i, 5, 0));
        }
        coords.push((0, 0, 8));
        let mask = mask_from_coords((12, 8, 10), (1.0, 1.0, 1.0), &coords);
        let comps = connected_components(&mask, Connectivity::TwentySix).unwrap();
        assert_eq!(comps.len(), 3);
        assert_eq!(comps[0].lesion_id, 1);
        assert_eq!(comps[0].voxel_count(), 10);
        assert_eq!(comps[1].voxel_count(), 5);
        assert_eq!(comps[2].voxel_count(), 1);
    }

    /// Naive BFS flood-fill oracle; returns the partition as sorted sets.
    fn bfs_partition(
        mask: &LabelVolume,
        connectivity: Connectivity,
    ) -> Vec<Vec<(usize, usize, usize)>> {
        let (nx, ny, nz) = mask.dims;
        let mut visited = vec![false; mask.num_voxels()];
        let mut parts = Vec::new();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let i = mask.index(x, y, z);
                    if mask.voxels()[i] == 0 || visited[i] {
                        continue;
                    }
                    let mut queue = std::collections::VecDeque::from([(x, y, z)]);
                    visited[i] = true;
                    let mut part = Vec::new();
                    while let Some((cx, cy, cz)) = queue.pop_front() {
                        part.push((cx, cy, cz));
                        for dz in -1i64..=1 {
                            for dy in -1i64..=1 {
                                for dx in -1i64..=1 {
                                    if (dx, dy, dz) == (0, 0, 0) {
                                        continue;
                                    }
                                    let face_dist = dx.abs() + dy.abs() + dz.abs();
                                    if connectivity == Connectivity::Six && face_dist != 1 {
                                        continue;
                                    }
                                    let (px, py, pz) =
                                        (cx as i64 + dx, cy as i64 + dy, cz as i64 + dz);
                                    if px < 0 || py < 0 || pz < 0 {
                                        continue;
                                    }
                                    let (px, py, pz) = (px as usize, py as usize, pz as usize);
                                    if px >= nx || py >= ny || pz >= nz {
                                        continue;
                                    }
                                    let j = mask.index(px, py, pz);
                                    if mask.voxels()[j] != 0 && !visited[j] {
                                        visited[j] = true;
                                        queue.push_back((px, py, pz));
                                    }
                                }
                            }
                        }
                    }
                    part.sort_unstable();
                    parts.push(part);
                }
            }
        }
        parts.sort();
        parts
    }

    #[test]
    fn union_find_matches_bfs_oracle_on_random_masks() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for round in 0..20 {
            let dims = (
                rng.random_range(1..16),
                rng.random_range(1..16),
                rng.random_range(1..16),
            );
            let fill = rng.random_range(0.1..0.6);
            let n = dims.0 * dims.1 * dims.2;
            let voxels: Vec<i16> = (0..n)
                .map(|_| if rng.random::<f64>() < fill { 1 } else { 0 })
                .collect();
            let mask = LabelVolume::new(dims, (1.0, 1.0, 1.0), VoxelDtype::U8, voxels).unwrap();
            for connectivity in [Connectivity::Six, Connectivity::TwentySix] {
                let mut got: Vec<Vec<(usize, usize, usize)>> =
                    connected_components(&mask, connectivity)
                        .unwrap()
                        .into_iter()
                        .map(|c| {
                            let mut v = c.voxel_coords;
                            v.sort_unstable();
                            v
                        })
                        .collect();
                got.sort();
                let want = bfs_partition(&mask, connectivity);
                assert_eq!(got, want, "round {round} connectivity {connectivity:?}");
            }
        }
    }

    #[test]
    fn partition_covers_foreground_exactly() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let dims = (10, 9, 8);
        let voxels: Vec<i16> = (0..720).map(|_| rng.random_range(0..2)).collect();
        let mask = LabelVolume::new(dims, (1.0, 1.0, 1.0), VoxelDtype::U8, voxels).unwrap();
        let comps = connected_components(&mask, Connectivity::TwentySix).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for c in &comps {
            for &coord in &c.voxel_coords {
                assert!(seen.insert(coord), "voxel {coord:?} in two components");
            }
        }
        let fg = mask.voxels().iter().filter(|&&v| v != 0).count();
        assert_eq!(seen.len(), fg);
    }

    #[test]
    fn physical_volume_is_count_times_voxel_volume() {
        let coords: Vec<_> = (0..10).map(|i| (i, 0usize, 0usize)).collect();
        let mask = mask_from_coords((10, 1, 1), (1.0, 1.0, 2.0), &coords);
        let comps = connected_components(&mask, Connectivity::TwentySix).unwrap();
        let morph = lesion_morphology(&comps[0], mask.spacing_mm).unwrap();
        assert_eq!(morph.physical_volume_mm3, 20.0);
    }

    #[test]
    fn single_voxel_axes_floor_at_one_edge() {
        let comp = LesionComponent {
            lesion_id: 1,
            voxel_coords: vec![(2, 2, 2)],
        };
        let morph = lesion_morphology(&comp, (1.0, 1.0, 1.0)).unwrap();
        let (a, b, c) = morph.ellipsoid_axes_mm;
        assert!((a - 1.0).abs() < 1e-12);
        assert!((b - 1.0).abs() < 1e-12);
        assert!((c - 1.0).abs() < 1e-12);
        assert!((morph.length_cm - 0.1).abs() < 1e-12);
    }

    fn rasterize_ellipsoid(
        semi_axes_vox: (f64, f64, f64),
        dims: (usize, usize, usize),
        spacing: (f64, f64, f64),
    ) -> LabelVolume {
        let mut vol = LabelVolume::zeros(dims, spacing, VoxelDtype::U8).unwrap();
        let cx = dims.0 as f64 / 2.0;
        let cy = dims.1 as f64 / 2.0;
        let cz = dims.2 as f64 / 2.0;
        for z in 0..dims.2 {
            for y in 0..dims.1 {
                for x in 0..dims.0 {
                    let dx = (x as f64 + 0.5 - cx) / semi_axes_vox.0;
                    let dy = (y as f64 + 0.5 - cy) / semi_axes_vox.1;
                    let dz = (z as f64 + 0.5 - cz) / semi_axes_vox.2;
                    if dx * dx + dy * dy + dz * dz <= 1.0 {
                        vol.set(x, y, z, 1);
                    }
                }
            }
        }
        vol
    }

    #[test]
    fn sphere_axes_recover_diameter() {
        // solid sphere, radius 10 mm at 0.5 mm isotropic spacing
        let mask = rasterize_ellipsoid((20.0, 20.0, 20.0), (44, 44, 44), (0.5, 0.5, 0.5));
        let comps = connected_components(&mask, Connectivity::TwentySix).unwrap();
        assert_eq!(comps.len(), 1);
        let morph = lesion_morphology(&comps[0], mask.spacing_mm).unwrap();
        let (a, b, c) = morph.ellipsoid_axes_mm;
        for axis in [a, b, c] {
            assert!(
                (axis - 20.0).abs() / 20.0 < 0.05,
                "axis {axis} deviates more than 5% from 20 mm"
            );
        }
        assert!((morph.length_cm - 2.0).abs() / 2.0 < 0.05);
    }

    #[test]
    fn rotated_ellipsoid_recovers_same_axes() {
        // ellipsoid with semi-axes (10, 6, 4) voxels, then rotated 90 degrees
        // about z (x and y swapped)
        let base = rasterize_ellipsoid((10.0, 6.0, 4.0), (26, 26, 26), (1.0, 1.0, 1.0));
        let rotated = rasterize_ellipsoid((6.0, 10.0, 4.0), (26, 26, 26), (1.0, 1.0, 1.0));
        let ma = lesion_morphology(
            &connected_components(&base, Connectivity::TwentySix).unwrap()[0],
            base.spacing_mm,
        )
        .unwrap();
        let mb = lesion_morphology(
            &connected_components(&rotated, Connectivity::TwentySix).unwrap()[0],
            rotated.spacing_mm,
        )
        .unwrap();
        let pairs = [
            (ma.ellipsoid_axes_mm.0, mb.ellipsoid_axes_mm.0),
            (ma.ellipsoid_axes_mm.1, mb.ellipsoid_axes_mm.1),
            (ma.ellipsoid_axes_mm.2, mb.ellipsoid_axes_mm.2),
        ];
        for (x, y) in pairs {
            assert!((x - y).abs() / x < 0.05, "{x} vs {y}");
        }
    }

    #[test]
    fn total_component_volume_equals_foreground_volume() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let dims = (12, 11, 10);
        let spacing = (0.7, 1.3, 2.1);
        let voxels: Vec<i16> = (0..1320).map(|_| rng.random_range(0..2)).collect();
        let mask = LabelVolume::new(dims, spacing, VoxelDtype::U8, voxels).unwrap();
        let comps = connected_components(&mask, Connectivity::TwentySix).unwrap();
        let total: f64 = comps
            .iter()
            .map(|c| lesion_morphology(c, spacing).unwrap().physical_volume_mm3)
            .sum();
        let fg = mask.voxels().iter().filter(|&&v| v != 0).count() as f64;
        assert!((total - fg * mask.voxel_volume_mm3()).abs() < 1e-9 * total.max(1.0));
    }

    #[test]
    fn organ_mapping_examples() {
        let dims = (10, 1, 1);
        let spacing = (1.0, 1.0, 1.0);
        let lesion_coords: Vec<_> = (0..10).map(|i| (i, 0usize, 0usize)).collect();
        let lesion = mask_from_coords(dims, spacing, &lesion_coords);
        let comp = &connected_components(&lesion, Connectivity::TwentySix).unwrap()[0];

        // fully inside the liver
        let liver_all = mask_from_coords(dims, spacing, &lesion_coords);
        let (organ, frac) =
            map_lesion_to_organ(comp, dims, &[("liver".to_string(), liver_all)]).unwrap();
        assert_eq!((organ.as_str(), frac), ("liver", 1.0));

        // 60% liver, 40% pancreas
        let liver_part = mask_from_coords(dims, spacing, &lesion_coords[0..6]);
        let pancreas_part = mask_from_coords(dims, spacing, &lesion_coords[6..10]);
        let (organ, frac) = map_lesion_to_organ(
            comp,
            dims,
            &[
                ("liver".to_string(), liver_part),
                ("pancreas".to_string(), pancreas_part),
            ],
        )
        .unwrap();
        assert_eq!(organ, "liver");
        assert!((frac - 0.6).abs() < 1e-12);

        // outside every mask
        let empty = LabelVolume::zeros(dims, spacing, VoxelDtype::U8).unwrap();
        let (organ, frac) =
            map_lesion_to_organ(comp, dims, &[("liver".to_string(), empty)]).unwrap();
        assert_eq!((organ.as_str(), frac), ("unassigned", 0.0));

        // dims mismatch is an error
        let wrong = LabelVolume::zeros((2, 2, 2), spacing, VoxelDtype::U8).unwrap();
        assert!(map_lesion_to_organ(comp, dims, &[("liver".to_string(), wrong)]).is_err());
    }

    fn record_with_length(length_cm: f64) -> LesionRecord {
        LesionRecord {
            lesion_id: 1,
            volume_id: "v".into(),
            organ: "liver".into(),
            organ_overlap_fraction: 1.0,
            voxel_count: 1,
            physical_volume_mm3: 1.0,
            centroid_mm: (0.0, 0.0, 0.0),
            ellipsoid_axes_mm: (length_cm * 10.0, 1.0, 1.0),
            length_cm,
        }
    }

    #[test]
    fn group_classification_canonical_cases() {
        assert_eq!(classify_lesion_group(&[]), LesionGroup::G0);
        assert_eq!(
            classify_lesion_group(&[record_with_length(1.5)]),
            LesionGroup::G1
        );
        assert_eq!(
            classify_lesion_group(&[record_with_length(3.0), record_with_length(1.0)]),
            LesionGroup::G2
        );
        assert_eq!(
            classify_lesion_group(&[record_with_length(6.0)]),
            LesionGroup::G3
        );
        // largest lesion wins for mixed cases
        assert_eq!(
            classify_lesion_group(&[record_with_length(6.0), record_with_length(1.0)]),
            LesionGroup::G3
        );
    }

    #[test]
    fn group_boundaries_fall_to_g2() {
        assert_eq!(
            classify_lesion_group(&[record_with_length(2.0)]),
            LesionGroup::G2
        );
        assert_eq!(
            classify_lesion_group(&[record_with_length(5.0)]),
            LesionGroup::G2
        );
        assert_eq!(
            classify_lesion_group(&[record_with_length(1.0), record_with_length(0.5)]),
            LesionGroup::G2
        );
    }

    #[test]
    fn group_is_order_invariant() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut records: Vec<LesionRecord> = [0.8, 2.4, 5.6, 1.1]
            .iter()
            .map(|&l| record_with_length(l))
            .collect();
        let expected = classify_lesion_group(&records);
        for _ in 0..100 {
            for i in (1..records.len()).rev() {
                records.swap(i, rng.random_range(0..=i));
            }
            assert_eq!(classify_lesion_group(&records), expected);
        }
    }
}
