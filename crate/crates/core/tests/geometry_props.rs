use nalgebra::{Matrix3, Rotation3, Vector3};
use proptest::prelude::*;

use primivox::geometry::{backproject, project, warp_pixel, CameraIntrinsics, PixelCoord, Pose};

fn camera() -> CameraIntrinsics {
    CameraIntrinsics::new(320.0, 310.0, 319.5, 239.5, 640, 480).unwrap()
}

fn pose(roll: f64, pitch: f64, yaw: f64, t: [f64; 3]) -> Pose {
    Pose::new(
        Rotation3::from_euler_angles(roll, pitch, yaw).into_inner(),
        Vector3::from(t),
    )
    .unwrap()
}

prop_compose! {
    fn any_pose()(
        r in -3.1f64..3.1, p in -1.5f64..1.5, y in -3.1f64..3.1,
        t in prop::array::uniform3(-5.0f64..5.0),
    ) -> Pose {
        pose(r, p, y, t)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn project_inverts_backproject(
        u in -200.0f64..840.0, v in -200.0f64..680.0, d in 0.1f64..100.0,
    ) {
        let k = camera();
        let p = PixelCoord::new(u, v);
        let x = backproject(p, d, &k).unwrap();
        let (q, z) = project(&x, &k).unwrap();
        prop_assert!((q.u - u).abs() < 1e-6 && (q.v - v).abs() < 1e-6);
        prop_assert!((z - d).abs() < 1e-9);
    }

    #[test]
    fn warping_there_and_back_is_identity(
        u in 0.0f64..639.0, v in 0.0f64..479.0, d in 1.0f64..50.0,
        yaw in -0.2f64..0.2, t in prop::array::uniform3(-0.5f64..0.5),
    ) {
        let k = camera();
        let target = Pose::identity();
        let source = pose(0.0, 0.0, yaw, t);
        let p = PixelCoord::new(u, v);
        let Some((q, d_s)) = warp_pixel(p, d, &k, &target, &source).unwrap() else {
            return Ok(());
        };
        let (back, d_t) = warp_pixel(q, d_s, &k, &source, &target).unwrap().unwrap();
        prop_assert!((back.u - u).abs() < 1e-6 && (back.v - v).abs() < 1e-6);
        prop_assert!((d_t - d).abs() < 1e-9 * d.max(1.0));
    }

    #[test]
    fn pose_times_inverse_is_identity(a in any_pose()) {
        let i = a.compose(&a.inverse());
        prop_assert!((i.rotation() - Matrix3::identity()).amax() < 1e-9);
        prop_assert!(i.translation().amax() < 1e-9);
        let j = a.inverse().compose(&a);
        prop_assert!((j.rotation() - Matrix3::identity()).amax() < 1e-9);
        prop_assert!(j.translation().amax() < 1e-9);
    }

    #[test]
    fn relative_pose_maps_target_points_into_the_source(
        a in any_pose(), b in any_pose(), x in prop::array::uniform3(-10.0f64..10.0),
    ) {
        let x = Vector3::from(x);
        let rel = Pose::target_to_source(&a, &b);
        let via_world = b.inverse().transform_point(&a.transform_point(&x));
        prop_assert!((rel.transform_point(&x) - via_world).amax() < 1e-9);
    }
}

#[test]
fn points_at_infinity_ignore_translation() {
    let k = camera();
    let source = Pose::from_translation(Vector3::new(0.7, -0.2, 0.4));
    let p = PixelCoord::new(101.0, 37.5);
    let (q, _) = warp_pixel(p, 1e12, &k, &Pose::identity(), &source)
        .unwrap()
        .unwrap();
    assert!((q.u - p.u).abs() < 1e-6 && (q.v - p.v).abs() < 1e-6);
}

#[test]
fn non_rotations_are_rejected() {
    let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
    assert!(Pose::new(reflect, Vector3::zeros()).is_err());
    assert!(Pose::new(Matrix3::identity() * 1.01, Vector3::zeros()).is_err());
    assert!(Pose::new(Matrix3::identity(), Vector3::new(f64::NAN, 0.0, 0.0)).is_err());
}
