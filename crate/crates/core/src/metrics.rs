//! Occupancy evaluation: per-class IoU / mIoU from a confusion matrix and
//! class-agnostic IoU, precision and recall.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::voxelfuse::{VoxelGrid, FREE};

/// `(K+1) × (K+1)` counts indexed `[ground truth][prediction]`; index `K`
/// is FREE.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(num_classes: usize) -> Self {
        let n = num_classes + 1;
        ConfusionMatrix {
            num_classes,
            counts: vec![0; n * n],
        }
    }

    /// Builds a matrix from row-major `(K+1)²` counts.
    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        let n = num_classes + 1;
        if counts.len() != n * n {
            return Err(Error::Dimension(format!(
                "confusion matrix needs {} counts, got {}",
                n * n,
                counts.len()
            )));
        }
        Ok(ConfusionMatrix {
            num_classes,
            counts,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * (self.num_classes + 1) + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds another matrix of the same shape.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.num_classes != other.num_classes {
            return Err(Error::Dimension("confusion matrices differ in size".into()));
        }
        self.counts
            .iter_mut()
            .zip(&other.counts)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    fn index(&self, label: u8) -> Result<usize> {
        if label == FREE {
            Ok(self.num_classes)
        } else if (label as usize) < self.num_classes {
            Ok(label as usize)
        } else {
            Err(Error::Domain(format!(
                "label {label} out of range for {} classes",
                self.num_classes
            )))
        }
    }
}

/// Counts voxels whose ground-truth label is not in `ignore`.
pub fn confusion(
    pred: &VoxelGrid,
    gt: &VoxelGrid,
    num_classes: usize,
    ignore: &BTreeSet<u8>,
) -> Result<ConfusionMatrix> {
    if pred.dims() != gt.dims() {
        return Err(Error::Dimension(format!(
            "prediction grid {:?} does not match ground truth {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(num_classes);
    let n = num_classes + 1;
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if ignore.contains(&g) {
            continue;
        }
        let gi = cm.index(g)?;
        let pi = cm.index(p)?;
        cm.counts[gi * n + pi] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassIou {
    /// IoU per semantic class; `None` where the class has an empty union.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

/// `IoU_k = TP/(TP + FP + FN)` for every semantic class (FREE excluded);
/// the mean skips classes absent from both prediction and ground truth.
pub fn per_class_iou(cm: &ConfusionMatrix) -> Result<ClassIou> {
    let k = cm.num_classes;
    let n = k + 1;
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let tp = cm.get(c, c);
        let row: u64 = (0..n).map(|j| cm.get(c, j)).sum();
        let col: u64 = (0..n).map(|i| cm.get(i, c)).sum();
        let union = row + col - tp;
        per_class.push((union > 0).then(|| tp as f64 / union as f64));
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::UndefinedMetric(
            "no class occurs in prediction or ground truth".into(),
        ));
    }
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    Ok(ClassIou { per_class, mean })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OccupancyScores {
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    /// Precision had a zero denominator (nothing predicted) and is reported
    /// as 0.
    pub precision_undefined: bool,
}

/// Class-agnostic IoU, precision and recall of occupied (non-FREE) voxels.
pub fn occupancy_prf(pred: &VoxelGrid, gt: &VoxelGrid) -> Result<OccupancyScores> {
    if pred.dims() != gt.dims() {
        return Err(Error::Dimension(format!(
            "prediction grid {:?} does not match ground truth {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        match (p != FREE, g != FREE) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    if tp + fneg == 0 {
        return Err(Error::UndefinedMetric(
            "ground truth has no occupied voxel; recall is undefined".into(),
        ));
    }
    let precision_undefined = tp + fp == 0;
    let precision = if precision_undefined {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    Ok(OccupancyScores {
        iou: tp as f64 / (tp + fp + fneg) as f64,
        precision,
        recall: tp as f64 / (tp + fneg) as f64,
        precision_undefined,
    })
}

/// Everything the evaluation report carries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub num_classes: usize,
    pub ignore: Vec<u8>,
    pub evaluated_voxels: u64,
    pub class_iou: ClassIou,
    pub occupancy: OccupancyScores,
}

pub fn evaluate(
    pred: &VoxelGrid,
    gt: &VoxelGrid,
    num_classes: usize,
    ignore: &BTreeSet<u8>,
) -> Result<MetricsReport> {
    let cm = confusion(pred, gt, num_classes, ignore)?;
    Ok(MetricsReport {
        num_classes,
        ignore: ignore.iter().copied().collect(),
        evaluated_voxels: cm.total(),
        class_iou: per_class_iou(&cm)?,
        occupancy: occupancy_prf(pred, gt)?,
    })
}

impl MetricsReport {
    /// Plain-text table: one IoU row per class, then the summary lines.
    pub fn to_table(&self) -> String {
        let mut s = String::from("class  iou\n");
        for (c, iou) in self.class_iou.per_class.iter().enumerate() {
            match iou {
                Some(v) => s.push_str(&format!("{c:>5}  {:.4}\n", v)),
                None => s.push_str(&format!("{c:>5}  -\n")),
            }
        }
        s.push_str(&format!("miou       {:.4}\n", self.class_iou.mean));
        s.push_str(&format!("iou        {:.4}\n", self.occupancy.iou));
        s.push_str(&format!("precision  {:.4}\n", self.occupancy.precision));
        s.push_str(&format!("recall     {:.4}\n", self.occupancy.recall));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid(labels: &[u8]) -> VoxelGrid {
        VoxelGrid::new([labels.len(), 1, 1], labels.to_vec()).unwrap()
    }

    #[test]
    fn identical_grids_give_a_diagonal() {
        let g = grid(&[0, 1, 2, FREE, 1]);
        let cm = confusion(&g, &g, 3, &BTreeSet::new()).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert_eq!(cm.get(i, j), 0);
                }
            }
        }
        assert_eq!(cm.get(1, 1), 2);
        assert_eq!(cm.total(), 5);
        let iou = per_class_iou(&cm).unwrap();
        assert_eq!(iou.per_class, vec![Some(1.0); 3]);
        assert_eq!(iou.mean, 1.0);
    }

    #[test]
    fn ignored_voxels_are_not_counted() {
        let g = grid(&[1, 1]);
        let cm = confusion(&grid(&[0, 1]), &g, 2, &BTreeSet::from([1])).unwrap();
        assert_eq!(cm.total(), 0);
    }

    #[test]
    fn hand_counted_confusion() {
        // gt:   0 0 1 FREE
        // pred: 0 1 1 FREE
        let cm = confusion(
            &grid(&[0, 1, 1, FREE]),
            &grid(&[0, 0, 1, FREE]),
            2,
            &BTreeSet::new(),
        )
        .unwrap();
        assert_eq!(cm.get(0, 0), 1);
        assert_eq!(cm.get(0, 1), 1);
        assert_eq!(cm.get(1, 1), 1);
        assert_eq!(cm.get(2, 2), 1);
        assert_eq!(cm.total(), 4);
    }

    #[test]
    fn iou_from_counts() {
        // Class 0: TP=3, FN=1 (gt 0 → pred 1), FP=1 (gt FREE → pred 0).
        let cm = ConfusionMatrix::from_counts(2, vec![3, 1, 0, 0, 2, 0, 1, 0, 5]).unwrap();
        let iou = per_class_iou(&cm).unwrap();
        assert_relative_eq!(iou.per_class[0].unwrap(), 0.6, epsilon = 1e-12);
    }

    #[test]
    fn absent_class_is_excluded_from_mean() {
        let cm = ConfusionMatrix::from_counts(
            3,
            vec![
                4, 0, 0, 0, //
                0, 0, 0, 0, //
                0, 0, 2, 2, //
                0, 0, 0, 9,
            ],
        )
        .unwrap();
        let iou = per_class_iou(&cm).unwrap();
        assert_eq!(iou.per_class[1], None);
        assert_relative_eq!(iou.mean, (1.0 + 0.5) / 2.0, epsilon = 1e-12);
        assert!(per_class_iou(&ConfusionMatrix::zeros(2)).is_err());
    }

    #[test]
    fn occupancy_examples() {
        let g = grid(&[0, 1, FREE]);
        let s = occupancy_prf(&g, &g).unwrap();
        assert_eq!((s.iou, s.precision, s.recall), (1.0, 1.0, 1.0));

        let mut gt = vec![FREE; 20];
        gt[..10].fill(0);
        let s = occupancy_prf(&grid(&[1; 20]), &grid(&gt)).unwrap();
        assert_eq!((s.precision, s.recall, s.iou), (0.5, 1.0, 0.5));

        let s = occupancy_prf(&grid(&[FREE; 3]), &g).unwrap();
        assert_eq!((s.iou, s.precision, s.recall), (0.0, 0.0, 0.0));
        assert!(s.precision_undefined);

        assert!(matches!(
            occupancy_prf(&g, &grid(&[FREE; 3])),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(
            occupancy_prf(&g, &grid(&[FREE; 4])),
            Err(Error::Dimension(_))
        ));
    }
}
