//! Fusion of calibrated per-pixel depth and semantics into a labelled voxel
//! grid. Each valid pixel casts one vote, for its class, into the single
//! voxel containing its back-projected surface point; each voxel then takes
//! the class with the most votes.

use std::collections::BTreeSet;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::calibrate::MetricDepthMap;
use crate::error::{Error, Result};
use crate::geometry::{backproject, CameraIntrinsics, PixelCoord, Pose};
use crate::imgproc::ValidityMask;
use crate::semantics::{SemanticMap, VOID};

/// Label of an unoccupied voxel.
pub const FREE: u8 = 255;

fn default_min_votes() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoxelGridConfig {
    /// World position of the grid's minimum corner.
    pub origin: [f64; 3],
    pub cell_size: f64,
    pub dims: [usize; 3],
    pub num_classes: usize,
    /// Votes a voxel needs before it is labelled.
    #[serde(default = "default_min_votes")]
    pub min_votes: u32,
    /// Pixel labels that do not vote (empty: moving objects participate).
    #[serde(default)]
    pub skip_classes: BTreeSet<u8>,
}

impl VoxelGridConfig {
    /// 80 m × 80 m × 6.4 m at 0.4 m cells (200×200×16), 17 classes. This is
    /// the customary occupancy-benchmark extent, not a derived value.
    pub fn occupancy_benchmark_preset() -> Self {
        VoxelGridConfig {
            origin: [-40.0, -40.0, -1.0],
            cell_size: 0.4,
            dims: [200, 200, 16],
            num_classes: 17,
            min_votes: 1,
            skip_classes: BTreeSet::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::Config("cell_size must be positive".into()));
        }
        if self.dims.contains(&0) {
            return Err(Error::Config("grid dims must be at least 1".into()));
        }
        if self.num_classes == 0 || self.num_classes >= FREE as usize {
            return Err(Error::Config(format!(
                "num_classes {} out of range",
                self.num_classes
            )));
        }
        if self.min_votes == 0 {
            return Err(Error::Config("min_votes must be at least 1".into()));
        }
        Ok(())
    }

    pub fn num_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    #[inline]
    pub fn linear_index(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]
    }

    pub fn cell_center(&self, idx: [usize; 3]) -> Vector3<f64> {
        Vector3::new(
            self.origin[0] + (idx[0] as f64 + 0.5) * self.cell_size,
            self.origin[1] + (idx[1] as f64 + 0.5) * self.cell_size,
            self.origin[2] + (idx[2] as f64 + 0.5) * self.cell_size,
        )
    }
}

/// `floor((P − origin)/cell_size)`, or `None` outside the grid.
pub fn point_to_voxel(p: &Vector3<f64>, cfg: &VoxelGridConfig) -> Option<[usize; 3]> {
    let mut out = [0usize; 3];
    for a in 0..3 {
        let f = ((p[a] - cfg.origin[a]) / cfg.cell_size).floor();
        if !(f >= 0.0 && f < cfg.dims[a] as f64) {
            return None;
        }
        out[a] = f as usize;
    }
    Some(out)
}

/// Per-voxel, per-class vote counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteGrid {
    dims: [usize; 3],
    num_classes: usize,
    counts: Vec<u32>,
}

impl VoteGrid {
    pub fn zeros(dims: [usize; 3], num_classes: usize) -> Self {
        VoteGrid {
            dims,
            num_classes,
            counts: vec![0; dims.iter().product::<usize>() * num_classes],
        }
    }

    pub fn from_counts(dims: [usize; 3], num_classes: usize, counts: Vec<u32>) -> Result<Self> {
        if counts.len() != dims.iter().product::<usize>() * num_classes {
            return Err(Error::Dimension(format!(
                "vote grid has {} counts, expected {:?}x{}",
                counts.len(),
                dims,
                num_classes
            )));
        }
        Ok(VoteGrid {
            dims,
            num_classes,
            counts,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    #[inline]
    pub fn get(&self, linear_voxel: usize, class: usize) -> u32 {
        self.counts[linear_voxel * self.num_classes + class]
    }

    #[inline]
    fn add(&mut self, linear_voxel: usize, class: usize) {
        self.counts[linear_voxel * self.num_classes + class] += 1;
    }

    /// Elementwise sum; used to merge per-worker grids.
    pub fn merge(&mut self, other: &VoteGrid) -> Result<()> {
        if self.dims != other.dims || self.num_classes != other.num_classes {
            return Err(Error::Dimension("vote grids differ in shape".into()));
        }
        self.counts
            .iter_mut()
            .zip(&other.counts)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Per-voxel argmax (lowest class wins ties); FREE below `min_votes`.
    pub fn to_labels(&self, min_votes: u32) -> VoxelGrid {
        let labels = self
            .counts
            .chunks(self.num_classes)
            .map(|votes| {
                let (best, &n) = votes.iter().enumerate().fold((0, &0u32), |acc, (i, v)| {
                    if *v > *acc.1 {
                        (i, v)
                    } else {
                        acc
                    }
                });
                if n >= min_votes && n > 0 {
                    best as u8
                } else {
                    FREE
                }
            })
            .collect();
        VoxelGrid {
            dims: self.dims,
            labels,
        }
    }
}

/// Per-voxel labels in `{FREE} ∪ {0..K−1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoxelGrid {
    dims: [usize; 3],
    labels: Vec<u8>,
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], labels: Vec<u8>) -> Result<Self> {
        if labels.len() != dims.iter().product::<usize>() {
            return Err(Error::Dimension(format!(
                "voxel grid has {} labels, expected {:?}",
                labels.len(),
                dims
            )));
        }
        Ok(VoxelGrid { dims, labels })
    }

    pub fn free(dims: [usize; 3]) -> Self {
        VoxelGrid {
            dims,
            labels: vec![FREE; dims.iter().product()],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }
    pub fn occupied(&self) -> usize {
        self.labels.iter().filter(|&&l| l != FREE).count()
    }
}

/// One calibrated view to fuse.
#[derive(Debug, Clone, Copy)]
pub struct FusionFrame<'a> {
    pub depth: &'a MetricDepthMap,
    pub valid: &'a ValidityMask,
    pub semantics: &'a SemanticMap,
    pub intrinsics: &'a CameraIntrinsics,
    pub pose: &'a Pose,
}

impl FusionFrame<'_> {
    fn check(&self, cfg: &VoxelGridConfig) -> Result<()> {
        let dims = self.depth.dims();
        if self.valid.dims() != dims
            || self.semantics.dims() != dims
            || (self.intrinsics.height, self.intrinsics.width) != dims
        {
            return Err(Error::Dimension(format!(
                "fusion frame parts disagree: depth {:?}, mask {:?}, semantics {:?}, camera {}x{}",
                dims,
                self.valid.dims(),
                self.semantics.dims(),
                self.intrinsics.height,
                self.intrinsics.width
            )));
        }
        if self.semantics.num_classes() > cfg.num_classes {
            return Err(Error::Dimension(format!(
                "semantic map has {} classes, grid only {}",
                self.semantics.num_classes(),
                cfg.num_classes
            )));
        }
        Ok(())
    }
}

/// Votes of a single frame.
pub fn frame_votes(frame: &FusionFrame<'_>, cfg: &VoxelGridConfig) -> Result<VoteGrid> {
    cfg.validate()?;
    frame.check(cfg)?;
    let mut votes = VoteGrid::zeros(cfg.dims, cfg.num_classes);
    let (h, w) = frame.depth.dims();
    for r in 0..h {
        for c in 0..w {
            let label = frame.semantics.get(r, c);
            if !frame.valid.get(r, c) || label == VOID || cfg.skip_classes.contains(&label) {
                continue;
            }
            let d = frame.depth.get(r, c);
            let Ok(p_cam) = backproject(PixelCoord::new(c as f64, r as f64), d, frame.intrinsics)
            else {
                continue;
            };
            if let Some(idx) = point_to_voxel(&frame.pose.transform_point(&p_cam), cfg) {
                votes.add(cfg.linear_index(idx), label as usize);
            }
        }
    }
    Ok(votes)
}

/// Fuses all frames and labels the grid.
pub fn fuse(frames: &[FusionFrame<'_>], cfg: &VoxelGridConfig) -> Result<(VoteGrid, VoxelGrid)> {
    cfg.validate()?;
    let mut votes = VoteGrid::zeros(cfg.dims, cfg.num_classes);
    for f in frames {
        votes.merge(&frame_votes(f, cfg)?)?;
    }
    let grid = votes.to_labels(cfg.min_votes);
    Ok((votes, grid))
}

/// Cell centers and labels of every occupied voxel, in index order.
pub fn grid_to_points(grid: &VoxelGrid, cfg: &VoxelGridConfig) -> Vec<(Vector3<f64>, u8)> {
    let [_, ny, nz] = grid.dims;
    grid.labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l != FREE)
        .map(|(i, &l)| {
            let idx = [i / (ny * nz), (i / nz) % ny, i % nz];
            (cfg.cell_center(idx), l)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg() -> VoxelGridConfig {
        VoxelGridConfig {
            origin: [-2.0, -2.0, 0.0],
            cell_size: 0.5,
            dims: [8, 8, 8],
            num_classes: 4,
            min_votes: 1,
            skip_classes: BTreeSet::new(),
        }
    }

    #[test]
    fn point_to_voxel_examples() {
        let c = cfg();
        assert_eq!(
            point_to_voxel(&c.cell_center([1, 2, 3]), &c),
            Some([1, 2, 3])
        );
        // Shared face between cells 3 and 4 along x.
        assert_eq!(
            point_to_voxel(&Vector3::new(0.0, 0.1, 0.1), &c),
            Some([4, 4, 0])
        );
        assert_eq!(point_to_voxel(&Vector3::new(2.0, 0.0, 0.0), &c), None);
        assert_eq!(point_to_voxel(&Vector3::new(0.0, 0.0, -0.01), &c), None);
    }

    fn single_pixel_frame(
        depth: f64,
        label: u8,
    ) -> (MetricDepthMap, ValidityMask, SemanticMap, CameraIntrinsics) {
        let k = CameraIntrinsics::new(10.0, 10.0, 1.0, 1.0, 3, 3).unwrap();
        let mut d = vec![0.0; 9];
        let mut v = vec![false; 9];
        d[4] = depth;
        v[4] = true;
        (
            MetricDepthMap::new(3, 3, d).unwrap(),
            ValidityMask::new(3, 3, v).unwrap(),
            SemanticMap::new(3, 3, 4, vec![label; 9]).unwrap(),
            k,
        )
    }

    #[test]
    fn single_pixel_single_vote() {
        let c = cfg();
        // Center pixel looks down +z; cell (4, 4, 6) has center z = 3.25.
        let (d, v, s, k) = single_pixel_frame(3.25, 3);
        let pose = Pose::from_translation(Vector3::new(0.25, 0.25, 0.0));
        let frame = FusionFrame {
            depth: &d,
            valid: &v,
            semantics: &s,
            intrinsics: &k,
            pose: &pose,
        };
        let (votes, grid) = fuse(&[frame], &c).unwrap();
        assert_eq!(votes.total(), 1);
        let li = c.linear_index([4, 4, 6]);
        assert_eq!(votes.get(li, 3), 1);
        assert_eq!(grid.labels()[li], 3);
        assert_eq!(grid.occupied(), 1);
    }

    #[test]
    fn tie_goes_to_lowest_class() {
        let c = cfg();
        let pose = Pose::from_translation(Vector3::new(0.25, 0.25, 0.0));
        let (d1, v1, s1, k) = single_pixel_frame(3.25, 2);
        let (d2, v2, s2, _) = single_pixel_frame(3.3, 1);
        let frames = [
            FusionFrame {
                depth: &d1,
                valid: &v1,
                semantics: &s1,
                intrinsics: &k,
                pose: &pose,
            },
            FusionFrame {
                depth: &d2,
                valid: &v2,
                semantics: &s2,
                intrinsics: &k,
                pose: &pose,
            },
        ];
        let (_, grid) = fuse(&frames, &c).unwrap();
        assert_eq!(grid.labels()[c.linear_index([4, 4, 6])], 1);
    }

    #[test]
    fn void_and_skipped_pixels_do_not_vote() {
        let mut c = cfg();
        let pose = Pose::from_translation(Vector3::new(0.25, 0.25, 0.0));
        let (d, v, s, k) = single_pixel_frame(3.25, VOID);
        let f = FusionFrame {
            depth: &d,
            valid: &v,
            semantics: &s,
            intrinsics: &k,
            pose: &pose,
        };
        assert_eq!(fuse(&[f], &c).unwrap().0.total(), 0);
        let (d, v, s, k) = single_pixel_frame(3.25, 2);
        let f = FusionFrame {
            depth: &d,
            valid: &v,
            semantics: &s,
            intrinsics: &k,
            pose: &pose,
        };
        c.skip_classes.insert(2);
        assert_eq!(fuse(&[f], &c).unwrap().0.total(), 0);
    }

    #[test]
    fn min_votes_threshold() {
        let mut votes = VoteGrid::zeros([1, 1, 2], 2);
        votes.add(0, 1);
        votes.add(1, 0);
        votes.add(1, 0);
        assert_eq!(votes.to_labels(2).labels(), &[FREE, 0]);
        assert_eq!(votes.to_labels(1).labels(), &[1, 0]);
    }

    #[test]
    fn points_export() {
        let c = cfg();
        assert!(grid_to_points(&VoxelGrid::free(c.dims), &c).is_empty());
        let mut g = VoxelGrid::free(c.dims);
        g.labels_mut()[c.linear_index([2, 5, 7])] = 1;
        let pts = grid_to_points(&g, &c);
        assert_eq!(pts.len(), 1);
        let expected = Vector3::new(-2.0 + 2.5 * 0.5, -2.0 + 5.5 * 0.5, 7.5 * 0.5);
        assert_relative_eq!(pts[0].0, expected, epsilon = 1e-12);
        assert_eq!(pts[0].1, 1);
        assert_eq!(point_to_voxel(&pts[0].0, &c), Some([2, 5, 7]));
    }

    #[test]
    fn frame_dimension_check() {
        let c = cfg();
        let (d, v, _, k) = single_pixel_frame(1.0, 0);
        let s = SemanticMap::new(2, 2, 4, vec![0; 4]).unwrap();
        let pose = Pose::identity();
        let f = FusionFrame {
            depth: &d,
            valid: &v,
            semantics: &s,
            intrinsics: &k,
            pose: &pose,
        };
        assert!(matches!(fuse(&[f], &c), Err(Error::Dimension(_))));
    }
}
