#![allow(dead_code)]

use nalgebra::Vector3;

use primivox::calibrate::MetricDepthMap;
use primivox::geometry::{CameraIntrinsics, Pose};
use primivox::imgproc::ValidityMask;
use primivox::semantics::{SemanticMap, VOID};
use primivox::voxelfuse::{FusionFrame, VoxelGridConfig, FREE};

/// Reference fusion: explicit ray arithmetic, a dense 4-D count array and a
/// separate argmax pass. Returns `(counts, labels, votes cast)`.
pub fn naive_fuse(views: &[FusionFrame<'_>], cfg: &VoxelGridConfig) -> (Vec<u32>, Vec<u8>, u64) {
    let [nx, ny, nz] = cfg.dims;
    let k = cfg.num_classes;
    let mut counts = vec![0u32; nx * ny * nz * k];
    let mut cast = 0u64;
    for v in views {
        let (h, w) = v.depth.dims();
        for r in 0..h {
            for c in 0..w {
                let l = v.semantics.get(r, c);
                if !v.valid.get(r, c) || l == VOID || cfg.skip_classes.contains(&l) {
                    continue;
                }
                let d = v.depth.get(r, c);
                let xc = (c as f64 - v.intrinsics.cx) / v.intrinsics.fx * d;
                let yc = (r as f64 - v.intrinsics.cy) / v.intrinsics.fy * d;
                let pw = v.pose.rotation() * Vector3::new(xc, yc, d) + v.pose.translation();
                let i: Vec<f64> = (0..3)
                    .map(|a| ((pw[a] - cfg.origin[a]) / cfg.cell_size).floor())
                    .collect();
                if (0..3).any(|a| i[a] < 0.0 || i[a] >= cfg.dims[a] as f64) {
                    continue;
                }
                let (x, y, z) = (i[0] as usize, i[1] as usize, i[2] as usize);
                counts[((x * ny + y) * nz + z) * k + l as usize] += 1;
                cast += 1;
            }
        }
    }
    let labels = counts
        .chunks(k)
        .map(|c| {
            let mut best = 0;
            for j in 1..k {
                if c[j] > c[best] {
                    best = j;
                }
            }
            if c[best] >= cfg.min_votes {
                best as u8
            } else {
                FREE
            }
        })
        .collect();
    (counts, labels, cast)
}

/// Owned parts of one fusion view.
pub struct View {
    pub depth: MetricDepthMap,
    pub valid: ValidityMask,
    pub sem: SemanticMap,
    pub k: CameraIntrinsics,
    pub pose: Pose,
}

impl View {
    pub fn frame(&self) -> FusionFrame<'_> {
        FusionFrame {
            depth: &self.depth,
            valid: &self.valid,
            semantics: &self.sem,
            intrinsics: &self.k,
            pose: &self.pose,
        }
    }
}

/// Mean absolute relative error and median absolute error of `depth`
/// against ground truth over the ground-truth valid pixels. A pixel the
/// estimate leaves invalid counts with its full ground-truth depth as error.
pub fn depth_errors(
    depth: &MetricDepthMap,
    valid: &ValidityMask,
    gt: &MetricDepthMap,
    gt_valid: &ValidityMask,
) -> (f64, f64) {
    let mut rel = Vec::new();
    let mut abs = Vec::new();
    for i in 0..gt.values().len() {
        if !gt_valid.data()[i] {
            continue;
        }
        let g = gt.values()[i];
        let e = if valid.data()[i] {
            (depth.values()[i] - g).abs()
        } else {
            g
        };
        rel.push(e / g);
        abs.push(e);
    }
    abs.sort_by(|a, b| a.total_cmp(b));
    let median = if abs.len() % 2 == 1 {
        abs[abs.len() / 2]
    } else {
        0.5 * (abs[abs.len() / 2 - 1] + abs[abs.len() / 2])
    };
    (rel.iter().sum::<f64>() / rel.len() as f64, median)
}
