//! Deterministic synthetic scenes with closed-form depth.
//!
//! A scene is a ground plane plus axis-aligned boxes, ray cast analytically.
//! Every surface carries a procedural texture that is a fixed function of the
//! 3D hit point, so renders from different poses are photometrically
//! consistent and the view-synthesis loss is minimized at the true depth.
//! Textures are parameterized by viewing angle from the texture anchor (the
//! target camera center), which keeps their on-screen frequency bounded.
//!
//! World frame: x right, y down, z forward; the ground is the plane
//! `y = ground.height`.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibrate::{
    moving_object_mask, DepthConvention, FrameBundle, MetricDepthMap, RelativeDepthMap, SourceView,
};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PixelCoord, Pose};
use crate::imgproc::{Image, ValidityMask};
use crate::semantics::{SemanticMap, VOID};

/// Texture frequencies are capped at this many cycles per pixel.
pub const MAX_CYCLES_PER_PIXEL: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// Two superposed oriented sinusoids.
    Sines,
    /// Product of two orthogonal sinusoids.
    Plaid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureSpec {
    pub pattern: Pattern,
    /// Base frequency in cycles per radian of viewing angle.
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundSpec {
    pub height: f64,
    pub label: u8,
    pub texture: TextureSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub center: [f64; 3],
    /// Full extents along x, y, z.
    pub size: [f64; 3],
    pub label: u8,
    pub texture: TextureSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseSpec {
    pub translation: [f64; 3],
    #[serde(default)]
    pub yaw_deg: f64,
    #[serde(default)]
    pub pitch_deg: f64,
}

impl PoseSpec {
    pub fn pose(&self) -> Pose {
        Pose::from_yaw_pitch(
            self.yaw_deg.to_radians(),
            self.pitch_deg.to_radians(),
            Vector3::from(self.translation),
        )
    }
}

/// Ground-truth affine corruption `d_rel = (d − γ)/λ(p)` with
/// `λ(p) = λ₀·(1 + variation·sin(2π·cycles·(u/W + v/(2H))))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Corruption {
    pub lambda: f64,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub variation: f64,
    #[serde(default = "default_cycles")]
    pub cycles: f64,
}

fn default_cycles() -> f64 {
    1.0
}

impl Corruption {
    pub fn lambda_field(&self, height: usize, width: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                let phase = c as f64 / width as f64 + 0.5 * r as f64 / height as f64;
                out.push(
                    self.lambda * (1.0 + self.variation * (2.0 * PI * self.cycles * phase).sin()),
                );
            }
        }
        out
    }
}

/// A box displaced between views; `displacement[i]` applies to source `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovingSpec {
    pub box_index: usize,
    pub displacement: Vec<[f64; 3]>,
}

fn default_far() -> f64 {
    40.0
}
fn default_background() -> f64 {
    0.85
}
fn default_channels() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default)]
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f64,
    /// Hits farther than this (camera Z) render as sky.
    #[serde(default = "default_far")]
    pub far: f64,
    #[serde(default = "default_background")]
    pub background: f64,
    #[serde(default = "default_channels")]
    pub channels: usize,
    pub num_classes: usize,
    pub ground: Option<GroundSpec>,
    #[serde(default)]
    pub boxes: Vec<BoxSpec>,
    pub target: PoseSpec,
    pub sources: Vec<PoseSpec>,
    pub corruption: Corruption,
    #[serde(default)]
    pub moving: Option<MovingSpec>,
    #[serde(default)]
    pub moving_classes: BTreeSet<u8>,
}

impl SceneSpec {
    /// Desk-scale three-class scene: textured ground (class 0) and boxes of
    /// classes 1 and 2, seen by a target camera and two laterally displaced
    /// sources with 0.3 m and 0.6 m baselines.
    pub fn desk(width: usize, height: usize, lambda: f64, gamma: f64) -> SceneSpec {
        let tex = |pattern, frequency| TextureSpec { pattern, frequency };
        SceneSpec {
            seed: 7,
            width,
            height,
            hfov_deg: 70.0,
            far: 30.0,
            background: default_background(),
            channels: 1,
            num_classes: 3,
            ground: Some(GroundSpec {
                height: 1.5,
                label: 0,
                texture: tex(Pattern::Sines, 9.0),
            }),
            boxes: vec![
                BoxSpec {
                    center: [-1.6, 0.5, 7.0],
                    size: [1.6, 2.0, 1.6],
                    label: 1,
                    texture: tex(Pattern::Plaid, 8.0),
                },
                BoxSpec {
                    center: [1.8, 0.2, 9.5],
                    size: [2.0, 2.6, 2.0],
                    label: 2,
                    texture: tex(Pattern::Sines, 7.0),
                },
                BoxSpec {
                    center: [0.0, -0.5, 16.0],
                    size: [8.0, 4.0, 1.0],
                    label: 1,
                    texture: tex(Pattern::Plaid, 6.0),
                },
            ],
            target: PoseSpec::default(),
            sources: vec![
                PoseSpec {
                    translation: [0.3, 0.0, 0.0],
                    ..PoseSpec::default()
                },
                PoseSpec {
                    translation: [-0.6, 0.0, 0.0],
                    ..PoseSpec::default()
                },
            ],
            corruption: Corruption {
                lambda,
                gamma,
                variation: 0.0,
                cycles: 1.0,
            },
            moving: None,
            moving_classes: BTreeSet::new(),
        }
    }

    /// Randomized variant of [`SceneSpec::desk`]: box placement, sizes,
    /// labels and texture frequencies are drawn from `seed`.
    pub fn random(seed: u64, width: usize, height: usize, lambda: f64, gamma: f64) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5ce7e);
        let mut spec = SceneSpec::desk(width, height, lambda, gamma);
        spec.seed = seed;
        let n = rng.gen_range(2..=4);
        spec.boxes = (0..n)
            .map(|_| {
                let z = rng.gen_range(5.0..14.0);
                let sx = rng.gen_range(0.8..2.5);
                let sy = rng.gen_range(0.8..2.8);
                BoxSpec {
                    center: [rng.gen_range(-0.35..0.35) * z, 1.5 - sy / 2.0, z],
                    size: [sx, sy, rng.gen_range(0.8..2.0)],
                    label: rng.gen_range(1..3),
                    texture: TextureSpec {
                        pattern: if rng.gen_bool(0.5) {
                            Pattern::Sines
                        } else {
                            Pattern::Plaid
                        },
                        frequency: rng.gen_range(6.0..10.0),
                    },
                }
            })
            .collect();
        spec.boxes.push(BoxSpec {
            center: [0.0, -0.5, rng.gen_range(16.0..20.0)],
            size: [12.0, 4.0, 1.0],
            label: 1,
            texture: TextureSpec {
                pattern: Pattern::Plaid,
                frequency: rng.gen_range(5.0..8.0),
            },
        });
        spec
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::from_hfov(self.hfov_deg, self.width, self.height)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width < 3 || self.height < 3 {
            return bad("scene image must be at least 3x3".into());
        }
        if !(self.hfov_deg > 1.0 && self.hfov_deg < 170.0) {
            return bad(format!("hfov_deg {} out of range", self.hfov_deg));
        }
        if self.channels != 1 && self.channels != 3 {
            return bad("channels must be 1 or 3".into());
        }
        if self.num_classes == 0 || self.num_classes > VOID as usize {
            return bad(format!("num_classes {} out of range", self.num_classes));
        }
        let labels = self
            .ground
            .iter()
            .map(|g| g.label)
            .chain(self.boxes.iter().map(|b| b.label));
        for l in labels {
            if l as usize >= self.num_classes {
                return bad(format!("surface label {l} >= num_classes"));
            }
        }
        if self.sources.is_empty() {
            return bad("scene needs at least one source pose".into());
        }
        let target = Vector3::from(self.target.translation);
        for (i, s) in self.sources.iter().enumerate() {
            if (Vector3::from(s.translation) - target).norm() <= 0.0 {
                return bad(format!("source {i} has a zero baseline"));
            }
        }
        for b in &self.boxes {
            if b.size.iter().any(|s| !(*s > 0.0)) {
                return bad("box sizes must be positive".into());
            }
            // Boxes must lie in front of every camera.
            for p in std::iter::once(&self.target).chain(&self.sources) {
                let cam = p.pose().inverse();
                let c = cam.transform_point(&Vector3::from(b.center));
                if c.z <= 0.0 {
                    return bad(format!("box at {:?} is behind a camera", b.center));
                }
            }
        }
        if let Some(m) = &self.moving {
            if m.box_index >= self.boxes.len() || m.displacement.len() != self.sources.len() {
                return bad("moving box index or displacement count is inconsistent".into());
            }
        }
        let c = &self.corruption;
        if !(c.lambda > 0.0) || !(c.variation.abs() < 1.0) {
            return bad("corruption needs lambda > 0 and |variation| < 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    dir: (f64, f64),
    freq: f64,
    phase: [f64; 3],
}

/// Texture with its random orientations and phases resolved.
#[derive(Debug, Clone)]
struct Texture {
    pattern: Pattern,
    waves: [Wave; 2],
    offset: [f64; 3],
}

impl Texture {
    fn new(spec: &TextureSpec, max_freq: f64, rng: &mut ChaCha8Rng) -> Texture {
        let base = spec.frequency.min(max_freq);
        let mut wave = |ratio: f64| {
            let theta: f64 = rng.gen_range(0.0..PI);
            Wave {
                dir: (theta.cos(), theta.sin()),
                freq: (base * ratio).min(max_freq),
                phase: [
                    rng.gen_range(0.0..2.0 * PI),
                    rng.gen_range(0.0..2.0 * PI),
                    rng.gen_range(0.0..2.0 * PI),
                ],
            }
        };
        let waves = match spec.pattern {
            Pattern::Sines => [wave(1.0), wave(1.7)],
            Pattern::Plaid => {
                let a = wave(1.0);
                let mut b = wave(1.3);
                b.dir = (-a.dir.1, a.dir.0);
                [a, b]
            }
        };
        let offset = [
            rng.gen_range(-0.08..0.08),
            rng.gen_range(-0.08..0.08),
            rng.gen_range(-0.08..0.08),
        ];
        Texture {
            pattern: spec.pattern,
            waves,
            offset,
        }
    }

    fn eval(&self, angles: (f64, f64), ch: usize) -> f64 {
        let arg =
            |w: &Wave| 2.0 * PI * w.freq * (w.dir.0 * angles.0 + w.dir.1 * angles.1) + w.phase[ch];
        let v = match self.pattern {
            Pattern::Sines => 0.22 * arg(&self.waves[0]).sin() + 0.13 * arg(&self.waves[1]).sin(),
            Pattern::Plaid => 0.32 * arg(&self.waves[0]).sin() * arg(&self.waves[1]).sin(),
        };
        0.5 + self.offset[ch] + v
    }
}

#[derive(Debug, Clone)]
struct Surface {
    kind: SurfaceKind,
    label: u8,
    texture: Texture,
    /// Rigid offset applied since texturing; the texture moves with it.
    shift: Vector3<f64>,
}

#[derive(Debug, Clone, Copy)]
enum SurfaceKind {
    Ground {
        height: f64,
    },
    Box {
        min: Vector3<f64>,
        max: Vector3<f64>,
    },
}

impl SurfaceKind {
    /// Smallest positive ray parameter of the intersection.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match *self {
            SurfaceKind::Ground { height } => {
                if dir.y.abs() < 1e-12 {
                    return None;
                }
                let t = (height - origin.y) / dir.y;
                (t > 1e-9).then_some(t)
            }
            SurfaceKind::Box { min, max } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for a in 0..3 {
                    if dir[a].abs() < 1e-15 {
                        if origin[a] < min[a] || origin[a] > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let inv = 1.0 / dir[a];
                    let (mut lo, mut hi) = ((min[a] - origin[a]) * inv, (max[a] - origin[a]) * inv);
                    if lo > hi {
                        std::mem::swap(&mut lo, &mut hi);
                    }
                    t0 = t0.max(lo);
                    t1 = t1.min(hi);
                }
                if t0 > t1 || t1 <= 1e-9 {
                    None
                } else if t0 > 1e-9 {
                    Some(t0)
                } else {
                    Some(t1)
                }
            }
        }
    }
}

/// Resolved scene geometry and textures.
#[derive(Debug, Clone)]
pub struct Scene {
    surfaces: Vec<Surface>,
    box_surfaces: Vec<usize>,
    anchor_inv: Pose,
    intrinsics: CameraIntrinsics,
    far: f64,
    background: f64,
    channels: usize,
    num_classes: usize,
}

/// First surface hit along a ray.
#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    /// Camera-Z depth of the hit point.
    pub depth: f64,
    pub label: u8,
    pub value: Vec<f64>,
}

/// Output of a render: image, camera-Z depth, hit mask and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Render {
    pub image: Image,
    pub depth: MetricDepthMap,
    pub valid: ValidityMask,
    pub semantics: SemanticMap,
}

impl Scene {
    pub fn from_spec(spec: &SceneSpec) -> Result<Scene> {
        spec.validate()?;
        let k = spec.intrinsics()?;
        let max_freq = MAX_CYCLES_PER_PIXEL * k.fx;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut surfaces = Vec::new();
        if let Some(g) = &spec.ground {
            surfaces.push(Surface {
                kind: SurfaceKind::Ground { height: g.height },
                label: g.label,
                texture: Texture::new(&g.texture, max_freq, &mut rng),
                shift: Vector3::zeros(),
            });
        }
        let mut box_surfaces = Vec::new();
        for b in &spec.boxes {
            let c = Vector3::from(b.center);
            let half = Vector3::from(b.size) * 0.5;
            box_surfaces.push(surfaces.len());
            surfaces.push(Surface {
                kind: SurfaceKind::Box {
                    min: c - half,
                    max: c + half,
                },
                label: b.label,
                texture: Texture::new(&b.texture, max_freq, &mut rng),
                shift: Vector3::zeros(),
            });
        }
        Ok(Scene {
            surfaces,
            box_surfaces,
            anchor_inv: spec.target.pose().inverse(),
            intrinsics: k,
            far: spec.far,
            background: spec.background,
            channels: spec.channels,
            num_classes: spec.num_classes,
        })
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    /// Copy of the scene with box `index` (spec order) rigidly shifted.
    pub fn with_box_displaced(&self, index: usize, offset: Vector3<f64>) -> Scene {
        let mut s = self.clone();
        let surf = &mut s.surfaces[self.box_surfaces[index]];
        if let SurfaceKind::Box { min, max } = surf.kind {
            surf.kind = SurfaceKind::Box {
                min: min + offset,
                max: max + offset,
            };
        }
        surf.shift += offset;
        s
    }

    fn shade(&self, surf: &Surface, hit: &Vector3<f64>, out: &mut [f64]) {
        let q = self.anchor_inv.transform_point(&(hit - surf.shift));
        let angles = (q.x.atan2(q.z), q.y.atan2(q.x.hypot(q.z)));
        for (ch, o) in out.iter_mut().enumerate() {
            *o = surf.texture.eval(angles, ch).clamp(0.0, 1.0);
        }
    }

    /// Casts the ray through continuous pixel `p` of a camera at `pose`.
    /// `None` for sky (no hit, or a hit beyond `far`).
    pub fn cast(&self, pose: &Pose, p: PixelCoord) -> Option<Hit> {
        let origin = *pose.translation();
        // Camera-frame direction with unit z, so the ray parameter is the
        // camera-Z depth of the hit.
        let dir = pose.rotation() * self.intrinsics.unproject_unit(p);
        let mut best: Option<(f64, usize)> = None;
        for (si, s) in self.surfaces.iter().enumerate() {
            if let Some(t) = s.kind.intersect(&origin, &dir) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, si));
                }
            }
        }
        let (t, si) = best.filter(|(t, _)| *t <= self.far)?;
        let surf = &self.surfaces[si];
        let mut value = vec![0.0; self.channels];
        self.shade(surf, &(origin + dir * t), &mut value);
        Some(Hit {
            depth: t,
            label: surf.label,
            value,
        })
    }

    /// Ray casts every pixel center from `pose`.
    pub fn render(&self, pose: &Pose) -> Render {
        let k = &self.intrinsics;
        let (h, w) = (k.height, k.width);
        let mut image = Image::filled(h, w, self.channels, self.background);
        let mut depth = vec![0.0; h * w];
        let mut valid = vec![false; h * w];
        let mut labels = vec![VOID; h * w];
        for r in 0..h {
            for c in 0..w {
                let Some(hit) = self.cast(pose, PixelCoord::new(c as f64, r as f64)) else {
                    continue;
                };
                let i = r * w + c;
                depth[i] = hit.depth;
                valid[i] = true;
                labels[i] = hit.label;
                image.pixel_mut(r, c).copy_from_slice(&hit.value);
            }
        }
        Render {
            image,
            depth: MetricDepthMap::new(h, w, depth).expect("finite depths"),
            valid: ValidityMask::new(h, w, valid).expect("dims"),
            semantics: SemanticMap::new(h, w, self.num_classes, labels).expect("labels in range"),
        }
    }
}

/// Renders `spec` from `pose` (static scene, no moving-box displacement).
pub fn render(spec: &SceneSpec, pose: &Pose) -> Result<Render> {
    Ok(Scene::from_spec(spec)?.render(pose))
}

/// Inverse of the affine depth model: `d_rel = (d − γ)/λ(p)` on valid
/// pixels. Pixels outside `valid` carry no relative depth.
pub fn corrupt_to_relative(
    depth: &MetricDepthMap,
    valid: &ValidityMask,
    lambda_field: &[f64],
    gamma: f64,
) -> Result<RelativeDepthMap> {
    let (h, w) = depth.dims();
    if lambda_field.len() != h * w || valid.dims() != (h, w) {
        return Err(Error::Dimension(format!(
            "scale field of {} values / mask {:?} do not match depth {:?}",
            lambda_field.len(),
            valid.dims(),
            (h, w)
        )));
    }
    let mut out = Vec::with_capacity(h * w);
    for (i, (&d, &l)) in depth.values().iter().zip(lambda_field).enumerate() {
        if !valid.data()[i] {
            out.push(0.0);
            continue;
        }
        if !(l > 0.0) {
            return Err(Error::Domain(format!("scale {l} must be positive")));
        }
        let rel = (d - gamma) / l;
        if rel < 0.0 {
            return Err(Error::Config(format!(
                "offset {gamma} exceeds depth {d}; choose gamma below the minimum depth"
            )));
        }
        out.push(rel);
    }
    RelativeDepthMap::with_mask(h, w, out, DepthConvention::Depth, valid.clone())
}

/// A synthetic calibration problem with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticFrame {
    pub bundle: FrameBundle,
    pub gt_depth: MetricDepthMap,
    pub gt_valid: ValidityMask,
    pub semantics: SemanticMap,
    pub lambda_star: Vec<f64>,
    pub gamma_star: f64,
    /// Renders of the source views (after any moving-box displacement).
    pub source_renders: Vec<Render>,
}

/// Renders the target and source views and corrupts the target depth.
pub fn make_bundle(spec: &SceneSpec) -> Result<SyntheticFrame> {
    let scene = Scene::from_spec(spec)?;
    let k = *scene.intrinsics();
    let target_pose = spec.target.pose();
    let target = scene.render(&target_pose);
    let source_renders: Vec<Render> = spec
        .sources
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let sc = match &spec.moving {
                Some(m) => scene.with_box_displaced(m.box_index, Vector3::from(m.displacement[i])),
                None => scene.clone(),
            };
            sc.render(&s.pose())
        })
        .collect();
    let lambda_star = spec.corruption.lambda_field(spec.height, spec.width);
    let gamma_star = spec.corruption.gamma;
    let rel_depth = corrupt_to_relative(&target.depth, &target.valid, &lambda_star, gamma_star)?;
    let bundle = FrameBundle {
        target: target.image.clone(),
        intrinsics: k,
        target_pose,
        sources: source_renders
            .iter()
            .zip(&spec.sources)
            .map(|(r, s)| SourceView {
                image: r.image.clone(),
                pose: s.pose(),
            })
            .collect(),
        rel_depth,
        static_mask: moving_object_mask(&target.semantics, &spec.moving_classes),
    };
    bundle.validate()?;
    Ok(SyntheticFrame {
        bundle,
        gt_depth: target.depth,
        gt_valid: target.valid,
        semantics: target.semantics,
        lambda_star,
        gamma_star,
        source_renders,
    })
}
