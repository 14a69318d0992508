use std::collections::BTreeSet;

use primivox::imgproc::{photometric_loss, ssim, Image, ValidityMask};
use primivox::metrics::{evaluate, occupancy_prf};
use primivox::voxelfuse::{VoxelGrid, FREE};
use proptest::prelude::*;

const K: usize = 4;
const DIMS: [usize; 3] = [4, 3, 5];

fn label() -> impl Strategy<Value = u8> {
    prop_oneof![Just(FREE), (0..K as u8)]
}

fn grid() -> impl Strategy<Value = VoxelGrid> {
    prop::collection::vec(label(), 60).prop_map(|l| VoxelGrid::new(DIMS, l).unwrap())
}

fn relabel(g: &VoxelGrid, perm: &[u8]) -> VoxelGrid {
    let labels = g
        .labels()
        .iter()
        .map(|&l| if l == FREE { FREE } else { perm[l as usize] })
        .collect();
    VoxelGrid::new(DIMS, labels).unwrap()
}

fn image(h: usize, w: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0..1.0f64, h * w).prop_map(move |d| Image::new(h, w, 1, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn occupancy_iou_bounded_by_precision_and_recall(p in grid(), g in grid()) {
        if let Ok(s) = occupancy_prf(&p, &g) {
            prop_assert!(s.iou <= s.precision.min(s.recall) + 1e-12);
            prop_assert!((0.0..=1.0).contains(&s.iou));
        }
    }

    #[test]
    fn class_permutation_permutes_ious(
        p in grid(),
        g in grid(),
        perm in Just((0..K as u8).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let none = BTreeSet::new();
        let (Ok(a), Ok(b)) = (
            evaluate(&p, &g, K, &none),
            evaluate(&relabel(&p, &perm), &relabel(&g, &perm), K, &none),
        ) else {
            return Ok(());
        };
        for (c, &pc) in perm.iter().enumerate() {
            prop_assert_eq!(a.class_iou.per_class[c], b.class_iou.per_class[pc as usize]);
        }
        prop_assert!((a.class_iou.mean - b.class_iou.mean).abs() < 1e-12);
        prop_assert_eq!(a.occupancy, b.occupancy);
    }

    #[test]
    fn perfect_prediction_scores_one(g in grid()) {
        prop_assume!(g.labels().iter().any(|&l| l != FREE));
        let r = evaluate(&g, &g, K, &BTreeSet::new()).unwrap();
        prop_assert_eq!(r.class_iou.mean, 1.0);
        prop_assert!(r.class_iou.per_class.iter().flatten().all(|&v| v == 1.0));
        prop_assert_eq!(r.occupancy.iou, 1.0);
    }

    #[test]
    fn photometric_loss_is_a_masked_distance(a in image(5, 6), b in image(5, 6)) {
        let mask = ValidityMask::full(5, 6, true);
        let ab = photometric_loss(&a, &b, &mask).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, photometric_loss(&b, &a, &mask).unwrap());
        prop_assert_eq!(photometric_loss(&a, &a, &mask).unwrap(), 0.0);
        if a != b {
            prop_assert!(ab > 0.0);
        }
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(a in image(5, 6), b in image(5, 6)) {
        let mask = ValidityMask::full(5, 6, true);
        let s = ssim(&a, &b, &mask).unwrap();
        prop_assert!((s - ssim(&b, &a, &mask).unwrap()).abs() < 1e-12);
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&s));
        prop_assert!((ssim(&a, &a, &mask).unwrap() - 1.0).abs() < 1e-12);
    }
}
