//! Pinhole camera model, rigid camera-to-world poses and the pixel/point
//! mappings used by view synthesis and voxel fusion.
//!
//! Pixel coordinates are continuous with integer values at pixel centers and
//! the origin at the center of the top-left pixel. Camera frames are
//! x-right, y-down, z-forward.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Depth below which a warped point counts as behind the source camera.
pub const MIN_WARP_DEPTH: f64 = 1e-6;

const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Centered principal point and a square-pixel focal length from a
    /// horizontal field of view in degrees.
    pub fn from_hfov(hfov_deg: f64, width: usize, height: usize) -> Result<Self> {
        let f = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        Self::new(
            f,
            f,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Domain(format!(
                "focal lengths must be positive and finite (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64)
            || !(self.cy > 0.0 && self.cy < self.height as f64)
        {
            return Err(Error::Domain(format!(
                "principal point ({}, {}) outside the {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Intrinsics of the same camera resampled to `width × height`, keeping
    /// pixel centers at integer coordinates.
    pub fn resized(&self, width: usize, height: usize) -> Result<Self> {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self::new(
            self.fx * sx,
            self.fy * sy,
            (self.cx + 0.5) * sx - 0.5,
            (self.cy + 0.5) * sy - 0.5,
            width,
            height,
        )
    }

    /// Normalized viewing direction `K⁻¹ p` (z = 1).
    #[inline]
    pub fn unproject_unit(&self, p: PixelCoord) -> Vector3<f64> {
        Vector3::new((p.u - self.cx) / self.fx, (p.v - self.cy) / self.fy, 1.0)
    }
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation
            .iter()
            .chain(translation.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::Domain("pose contains non-finite entries".into()));
        }
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        if gram.amax() > ROTATION_TOL {
            return Err(Error::Domain(format!(
                "rotation is not orthonormal (max |RᵀR − I| = {:e})",
                gram.amax()
            )));
        }
        if rotation.determinant() <= 0.0 {
            return Err(Error::Domain("rotation has negative determinant".into()));
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation by `yaw` about the camera y axis, then `pitch` about x.
    pub fn from_yaw_pitch(yaw: f64, pitch: f64, t: Vector3<f64>) -> Self {
        let (sy, cy) = yaw.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let ry = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
        let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cp, -sp, 0.0, sp, cp);
        Pose {
            rotation: ry * rx,
            translation: t,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Transform taking target-camera coordinates to source-camera
    /// coordinates, `T_s⁻¹ T_t`.
    pub fn target_to_source(target: &Pose, source: &Pose) -> Pose {
        source.inverse().compose(target)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

impl PixelCoord {
    pub const fn new(u: f64, v: f64) -> Self {
        PixelCoord { u, v }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl Ray {
    pub fn point_at(&self, s: f64) -> Vector3<f64> {
        self.origin + self.direction * s
    }
}

pub fn backproject(p: PixelCoord, depth: f64, k: &CameraIntrinsics) -> Result<Vector3<f64>> {
    if !(depth > 0.0) {
        return Err(Error::Domain(format!(
            "backprojection depth must be positive, got {depth}"
        )));
    }
    Ok(k.unproject_unit(p) * depth)
}

/// Projects a camera-frame point; `None` when it lies on or behind the image
/// plane.
pub fn project(p: &Vector3<f64>, k: &CameraIntrinsics) -> Option<(PixelCoord, f64)> {
    if !(p.z > 0.0) {
        return None;
    }
    let px = PixelCoord::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy);
    Some((px, p.z))
}

/// Maps a target pixel with depth `depth` into the source view.
///
/// Returns `Ok(None)` when the point lands behind the source camera.
pub fn warp_pixel(
    p_t: PixelCoord,
    depth: f64,
    k: &CameraIntrinsics,
    target: &Pose,
    source: &Pose,
) -> Result<Option<(PixelCoord, f64)>> {
    let warp = Warp::new(k, target, source);
    if !(depth > 0.0) {
        return Err(Error::Domain(format!(
            "warp depth must be positive, got {depth}"
        )));
    }
    Ok(warp.apply(p_t, depth).map(|w| (w.pixel, w.depth)))
}

pub fn pixel_ray(p: PixelCoord, k: &CameraIntrinsics, pose: &Pose) -> Ray {
    let dir = pose.rotation * k.unproject_unit(p);
    Ray {
        origin: pose.translation,
        direction: dir.normalize(),
    }
}

/// A warped pixel together with the derivative of its position with respect
/// to the target depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpedPixel {
    pub pixel: PixelCoord,
    pub depth: f64,
    pub du_dd: f64,
    pub dv_dd: f64,
}

/// Precomputed target→source reprojection for a fixed camera pair.
#[derive(Debug, Clone, Copy)]
pub struct Warp {
    k: CameraIntrinsics,
    rel: Pose,
}

impl Warp {
    pub fn new(k: &CameraIntrinsics, target: &Pose, source: &Pose) -> Self {
        Warp {
            k: *k,
            rel: Pose::target_to_source(target, source),
        }
    }

    /// `p_s = K T_s⁻¹ T_t d K⁻¹ p_t` with analytic `∂p_s/∂d`.
    #[inline]
    pub fn apply(&self, p_t: PixelCoord, depth: f64) -> Option<WarpedPixel> {
        let a = self.rel.rotation * self.k.unproject_unit(p_t);
        let q = a * depth + self.rel.translation;
        if q.z <= MIN_WARP_DEPTH {
            return None;
        }
        let inv_z = 1.0 / q.z;
        let u = self.k.fx * q.x * inv_z + self.k.cx;
        let v = self.k.fy * q.y * inv_z + self.k.cy;
        let inv_z2 = inv_z * inv_z;
        Some(WarpedPixel {
            pixel: PixelCoord::new(u, v),
            depth: q.z,
            du_dd: self.k.fx * (a.x * q.z - q.x * a.z) * inv_z2,
            dv_dd: self.k.fy * (a.y * q.z - q.y * a.z) * inv_z2,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 60.0, 100, 120).unwrap()
    }

    #[test]
    fn backproject_examples() {
        let k = k();
        let p = backproject(PixelCoord::new(k.cx, k.cy), 5.0, &k).unwrap();
        assert_eq!(p, Vector3::new(0.0, 0.0, 5.0));
        let p = backproject(PixelCoord::new(k.cx + k.fx, k.cy), 2.0, &k).unwrap();
        assert_eq!(p, Vector3::new(2.0, 0.0, 2.0));
        let p = backproject(PixelCoord::new(10.0, 20.0), 3.0, &k).unwrap();
        assert_relative_eq!(p, Vector3::new(-1.2, -1.2, 3.0), epsilon = 1e-12);
        assert!(matches!(
            backproject(PixelCoord::new(1.0, 1.0), 0.0, &k),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn project_examples() {
        let k = k();
        let (p, d) = project(&Vector3::new(0.0, 0.0, 5.0), &k).unwrap();
        assert_eq!((p.u, p.v, d), (k.cx, k.cy, 5.0));
        assert!(project(&Vector3::new(1.0, 0.0, -1.0), &k).is_none());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 5.0, 5.0, 10, 10).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 10.0, 5.0, 10, 10).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 5.0, 0.0, 10, 10).is_err());
    }

    #[test]
    fn pose_rejects_non_rotation() {
        let mut r = Matrix3::identity();
        r[(0, 0)] = -1.0;
        assert!(Pose::new(r, Vector3::zeros()).is_err());
        assert!(Pose::new(Matrix3::identity() * 1.01, Vector3::zeros()).is_err());
    }

    #[test]
    fn identity_warp() {
        let k = k();
        let pose = Pose::from_yaw_pitch(0.3, -0.1, Vector3::new(1.0, 2.0, 3.0));
        let p = PixelCoord::new(12.25, 80.5);
        let (q, d) = warp_pixel(p, 7.0, &k, &pose, &pose).unwrap().unwrap();
        assert_relative_eq!(q.u, p.u, epsilon = 1e-9);
        assert_relative_eq!(q.v, p.v, epsilon = 1e-9);
        assert_relative_eq!(d, 7.0, epsilon = 1e-12);
    }

    #[test]
    fn stereo_disparity() {
        let k = k();
        let target = Pose::identity();
        let source = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let (q, _) = warp_pixel(PixelCoord::new(50.0, 33.0), 10.0, &k, &target, &source)
            .unwrap()
            .unwrap();
        assert_eq!(q.u, 40.0);
        assert_eq!(q.v, 33.0);
    }

    #[test]
    fn far_points_are_translation_invariant() {
        let k = k();
        let source = Pose::from_translation(Vector3::new(0.5, -0.2, 1.0));
        let p = PixelCoord::new(20.0, 70.0);
        let (q, _) = warp_pixel(p, 1e12, &k, &Pose::identity(), &source)
            .unwrap()
            .unwrap();
        assert_relative_eq!(q.u, p.u, epsilon = 1e-6);
        assert_relative_eq!(q.v, p.v, epsilon = 1e-6);
    }

    #[test]
    fn behind_source_camera() {
        let k = k();
        let source = Pose::from_translation(Vector3::new(0.0, 0.0, 20.0));
        let w = warp_pixel(
            PixelCoord::new(50.0, 60.0),
            5.0,
            &k,
            &Pose::identity(),
            &source,
        );
        assert_eq!(w.unwrap(), None);
    }

    #[test]
    fn pixel_ray_examples() {
        let k = k();
        let r = pixel_ray(PixelCoord::new(k.cx, k.cy), &k, &Pose::identity());
        assert_eq!(r.origin, Vector3::zeros());
        assert_eq!(r.direction, Vector3::new(0.0, 0.0, 1.0));

        let pose = Pose::from_yaw_pitch(-0.4, 0.2, Vector3::new(3.0, -1.0, 2.0));
        let p = PixelCoord::new(7.5, 101.0);
        let s = 4.2;
        let r = pixel_ray(p, &k, &pose);
        assert_relative_eq!(r.direction.norm(), 1.0, epsilon = 1e-12);
        let along = r.point_at(s * k.unproject_unit(p).norm());
        let direct = pose.transform_point(&backproject(p, s, &k).unwrap());
        assert_relative_eq!(along, direct, epsilon = 1e-9);
    }

    #[test]
    fn warp_depth_derivative_matches_finite_difference() {
        let k = k();
        let warp = Warp::new(
            &k,
            &Pose::from_yaw_pitch(0.05, 0.02, Vector3::new(0.1, 0.0, 0.0)),
            &Pose::from_yaw_pitch(-0.03, 0.0, Vector3::new(0.7, 0.1, 0.4)),
        );
        let p = PixelCoord::new(31.0, 17.0);
        let d = 6.0;
        let h = 1e-5;
        let w = warp.apply(p, d).unwrap();
        let hi = warp.apply(p, d + h).unwrap().pixel;
        let lo = warp.apply(p, d - h).unwrap().pixel;
        assert_relative_eq!(w.du_dd, (hi.u - lo.u) / (2.0 * h), max_relative = 1e-7);
        assert_relative_eq!(w.dv_dd, (hi.v - lo.v) / (2.0 * h), max_relative = 1e-7);
    }
}
