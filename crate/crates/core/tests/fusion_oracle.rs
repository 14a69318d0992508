use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use primivox::calibrate::MetricDepthMap;
use primivox::geometry::{CameraIntrinsics, Pose};
use primivox::imgproc::ValidityMask;
use primivox::semantics::{SemanticMap, VOID};
use primivox::voxelfuse::{fuse, FusionFrame, VoteGrid, VoxelGridConfig};

mod common;
use common::{naive_fuse, View};

fn random_view(rng: &mut ChaCha8Rng, classes: usize) -> View {
    let (h, w) = (12, 16);
    let k = CameraIntrinsics::new(14.0, 14.0, 7.5, 5.5, w, h).unwrap();
    let depth: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.5..6.0)).collect();
    let valid: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(0.85)).collect();
    let labels: Vec<u8> = (0..h * w)
        .map(|_| {
            if rng.gen_bool(0.1) {
                VOID
            } else {
                rng.gen_range(0..classes as u8)
            }
        })
        .collect();
    let pose = Pose::from_yaw_pitch(
        rng.gen_range(-0.3..0.3),
        rng.gen_range(-0.2..0.2),
        Vector3::new(
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-1.0..0.0),
        ),
    );
    View {
        depth: MetricDepthMap::new(h, w, depth).unwrap(),
        valid: ValidityMask::new(h, w, valid).unwrap(),
        sem: SemanticMap::new(h, w, classes, labels).unwrap(),
        k,
        pose,
    }
}

fn frames(views: &[View]) -> Vec<FusionFrame<'_>> {
    views.iter().map(View::frame).collect()
}

#[test]
fn fusion_matches_the_naive_reference() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes = rng.gen_range(2..6);
        let side = rng.gen_range(4..=16);
        let cfg = VoxelGridConfig {
            origin: [-2.0, -2.0, -1.0],
            cell_size: 4.0 / side as f64,
            dims: [side, side, side],
            num_classes: classes,
            min_votes: rng.gen_range(1..3),
            skip_classes: Default::default(),
        };
        let views: Vec<View> = (0..3).map(|_| random_view(&mut rng, classes)).collect();
        let (votes, grid) = fuse(&frames(&views), &cfg).unwrap();
        let (counts, labels, expected) = naive_fuse(&frames(&views), &cfg);
        assert_eq!(votes.counts(), &counts[..], "seed {seed}");
        assert_eq!(grid.labels(), &labels[..], "seed {seed}");
        assert_eq!(votes.total(), expected, "seed {seed}");
    }
}

#[test]
fn fusion_is_order_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let cfg = VoxelGridConfig {
        origin: [-2.0, -2.0, -1.0],
        cell_size: 0.5,
        dims: [8, 8, 8],
        num_classes: 4,
        min_votes: 1,
        skip_classes: Default::default(),
    };
    let views: Vec<View> = (0..4).map(|_| random_view(&mut rng, 4)).collect();
    let f = frames(&views);
    let (a, ga) = fuse(&f, &cfg).unwrap();
    let reversed: Vec<_> = f.iter().rev().copied().collect();
    let (b, gb) = fuse(&reversed, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ga, gb);
    let mut merged = VoteGrid::zeros(cfg.dims, cfg.num_classes);
    for v in f.iter().rev() {
        merged
            .merge(&fuse(std::slice::from_ref(v), &cfg).unwrap().0)
            .unwrap();
    }
    assert_eq!(merged, a);
}
