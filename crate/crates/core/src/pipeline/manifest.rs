//! Frame-set manifests and loading of the files they reference.
//!
//! ```toml
//! num_classes = 3
//! embeddings = "embeddings.pvxt"   # only needed by frames with `features`
//!
//! [[frames]]
//! name = "target"
//! image = "frames/target.image.pvxt"
//! camera = "frames/target.camera.txt"
//! rel_depth = "frames/target.rel.pvxt"
//! rel_valid = "frames/target.relvalid.pvxt"
//! depth_convention = "depth"       # or "disparity"
//! semantics = "frames/target.sem.pvxt"
//! gt_depth = "gt/target.depth.pvxt"
//! gt_valid = "gt/target.valid.pvxt"
//! sources = ["left", "right"]
//! ```
//!
//! Paths are relative to the manifest's directory. Frames that list sources
//! are calibration targets; the others only serve as source views.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibrate::{
    moving_object_mask, DepthConvention, FrameBundle, MetricDepthMap, RelativeDepthMap, SourceView,
};
use crate::error::{Error, Result};
use crate::geometry::CameraIntrinsics;
use crate::imgproc::{resize_bilinear, resize_masked, resize_nearest, Image, ValidityMask};
use crate::semantics::{assign_labels, EmbeddingMatrix, FeatureMap, SemanticMap};

use super::camera::{read_camera, CameraRecord};
use super::tensor::{read_tensor, Tensor};
use super::write_atomic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub name: String,
    pub image: PathBuf,
    pub camera: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_depth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_valid: Option<PathBuf>,
    #[serde(default)]
    pub depth_convention: DepthConvention,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantics: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_depth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_valid: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<String>,
}

impl FrameEntry {
    pub fn is_target(&self) -> bool {
        !self.sources.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    #[serde(default)]
    pub frames: Vec<FrameEntry>,
}

impl Manifest {
    pub fn validate(&self, path: &Path) -> Result<()> {
        let mut names = BTreeSet::new();
        for f in &self.frames {
            if !names.insert(f.name.as_str()) {
                return Err(Error::format(
                    path,
                    format!("duplicate frame name `{}`", f.name),
                ));
            }
            if f.semantics.is_some() && f.features.is_some() {
                return Err(Error::format(
                    path,
                    format!("frame `{}` gives both semantics and features", f.name),
                ));
            }
        }
        for f in &self.frames {
            if f.is_target() && f.rel_depth.is_none() {
                return Err(Error::format(
                    path,
                    format!("frame `{}` has sources but no rel_depth", f.name),
                ));
            }
            for s in &f.sources {
                if s == &f.name || !names.contains(s.as_str()) {
                    return Err(Error::format(
                        path,
                        format!("frame `{}` lists unknown or self source `{s}`", f.name),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A manifest together with the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

fn check_dims(path: &Path, what: &str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return Err(Error::Dimension(format!(
            "{}: {what} is {}x{} but the frame is {}x{}",
            path.display(),
            got.0,
            got.1,
            want.0,
            want.1
        )));
    }
    Ok(())
}

fn hw(t: &Tensor, path: &Path) -> Result<(usize, usize)> {
    if t.dims.len() < 2 {
        return Err(Error::Dimension(format!(
            "{}: expected at least rank 2, got dims {:?}",
            path.display(),
            t.dims
        )));
    }
    Ok((t.dims[0], t.dims[1]))
}

pub fn read_image(path: &Path) -> Result<Image> {
    let t = read_tensor(path)?;
    let (h, w) = hw(&t, path)?;
    let c = match t.dims.len() {
        2 => 1,
        3 => t.dims[2],
        _ => {
            return Err(Error::Dimension(format!(
                "{}: image dims {:?}",
                path.display(),
                t.dims
            )))
        }
    };
    Image::new(h, w, c, t.to_f64(path)?)
}

pub fn read_mask(path: &Path) -> Result<ValidityMask> {
    let t = read_tensor(path)?;
    t.expect_rank(2, path)?;
    let data = t
        .as_u8(path)?
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(Error::format(path, format!("mask value {b} is not 0 or 1"))),
        })
        .collect::<Result<Vec<_>>>()?;
    ValidityMask::new(t.dims[0], t.dims[1], data)
}

pub fn read_scalar_map(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let t = read_tensor(path)?;
    t.expect_rank(2, path)?;
    Ok((t.dims[0], t.dims[1], t.to_f64(path)?))
}

pub fn read_labels(path: &Path, num_classes: usize) -> Result<SemanticMap> {
    let t = read_tensor(path)?;
    t.expect_rank(2, path)?;
    SemanticMap::new(t.dims[0], t.dims[1], num_classes, t.as_u8(path)?.to_vec())
}

pub fn image_tensor(img: &Image) -> Result<Tensor> {
    Tensor::f32(
        vec![img.height(), img.width(), img.channels()],
        img.data().iter().copied(),
    )
}

pub fn mask_tensor(mask: &ValidityMask) -> Result<Tensor> {
    Tensor::u8(
        vec![mask.height(), mask.width()],
        mask.data().iter().map(|&b| b as u8).collect(),
    )
}

pub fn scalar_tensor(dims: (usize, usize), values: &[f64]) -> Result<Tensor> {
    Tensor::f32(vec![dims.0, dims.1], values.iter().copied())
}

/// Everything known about one frame, at its working resolution.
#[derive(Debug, Clone)]
pub struct LoadedFrame {
    pub name: String,
    pub image: Image,
    pub camera: CameraRecord,
    pub rel_depth: Option<RelativeDepthMap>,
    pub semantics: Option<SemanticMap>,
    pub gt: Option<(MetricDepthMap, ValidityMask)>,
}

impl Dataset {
    /// Reads and validates a manifest. An empty file is an empty frame set.
    pub fn open(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest =
            toml::from_str(&text).map_err(|e| Error::format(path, e.message().to_string()))?;
        manifest.validate(path)?;
        let root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Dataset { root, manifest })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text =
            toml::to_string(&self.manifest).map_err(|e| Error::format(path, e.to_string()))?;
        write_atomic(path, text.as_bytes())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }

    pub fn entry(&self, name: &str) -> Result<&FrameEntry> {
        self.manifest
            .frames
            .iter()
            .find(|f| f.name == name)
            .ok_or_else(|| Error::Config(format!("no frame named `{name}`")))
    }

    pub fn targets(&self) -> impl Iterator<Item = &FrameEntry> {
        self.manifest.frames.iter().filter(|f| f.is_target())
    }

    fn num_classes(&self, needed_by: &str) -> Result<usize> {
        self.manifest.num_classes.ok_or_else(|| {
            Error::Config(format!(
                "frame `{needed_by}` has semantics but the manifest sets no num_classes"
            ))
        })
    }

    fn embeddings(&self) -> Result<EmbeddingMatrix> {
        let rel = self.manifest.embeddings.as_ref().ok_or_else(|| {
            Error::Config("features given but the manifest names no embeddings".into())
        })?;
        let path = self.resolve(rel);
        let t = read_tensor(&path)?;
        t.expect_rank(2, &path)?;
        EmbeddingMatrix::new(t.dims[0], t.dims[1], t.to_f64(&path)?)
    }

    /// Loads one frame, resampled to `resize = [height, width]` if given.
    pub fn load_frame(&self, name: &str, resize: Option<[usize; 2]>) -> Result<LoadedFrame> {
        let e = self.entry(name)?;
        let image_path = self.resolve(&e.image);
        let image = read_image(&image_path)?;
        let dims = image.dims();
        let camera_path = self.resolve(&e.camera);
        let camera = read_camera(&camera_path)?;
        let k = camera.intrinsics;
        check_dims(&camera_path, "camera", (k.height, k.width), dims)?;

        let rel = match &e.rel_depth {
            Some(p) => {
                let path = self.resolve(p);
                let (h, w, v) = read_scalar_map(&path)?;
                check_dims(&path, "relative depth", (h, w), dims)?;
                let valid = match &e.rel_valid {
                    Some(m) => {
                        let mp = self.resolve(m);
                        let mask = read_mask(&mp)?;
                        check_dims(&mp, "relative depth mask", mask.dims(), dims)?;
                        mask
                    }
                    None => ValidityMask::full(h, w, true),
                };
                Some((v, valid))
            }
            None => None,
        };

        let semantics = match (&e.semantics, &e.features) {
            (Some(p), _) => {
                let path = self.resolve(p);
                let s = read_labels(&path, self.num_classes(name)?)?;
                check_dims(&path, "semantics", s.dims(), dims)?;
                Some(s)
            }
            (None, Some(p)) => {
                let path = self.resolve(p);
                let t = read_tensor(&path)?;
                t.expect_rank(3, &path)?;
                check_dims(&path, "features", (t.dims[0], t.dims[1]), dims)?;
                let feat = FeatureMap::new(t.dims[0], t.dims[1], t.dims[2], t.to_f64(&path)?)?;
                let a = assign_labels(&feat, &self.embeddings()?)?;
                if a.zero_norm > 0 {
                    log::warn!(
                        "{name}: {} zero-norm feature vectors labelled void",
                        a.zero_norm
                    );
                }
                Some(a.map)
            }
            (None, None) => None,
        };

        let gt = match &e.gt_depth {
            Some(p) => {
                let path = self.resolve(p);
                let (h, w, v) = read_scalar_map(&path)?;
                check_dims(&path, "ground-truth depth", (h, w), dims)?;
                let valid = match &e.gt_valid {
                    Some(m) => read_mask(&self.resolve(m))?,
                    None => ValidityMask::new(h, w, v.iter().map(|&d| d > 0.0).collect())?,
                };
                check_dims(&path, "ground-truth mask", valid.dims(), dims)?;
                Some((v, valid))
            }
            None => None,
        };

        let Some([nh, nw]) = resize.filter(|&[h, w]| (h, w) != dims) else {
            let rel_depth = rel
                .map(|(v, m)| RelativeDepthMap::with_mask(dims.0, dims.1, v, e.depth_convention, m))
                .transpose()?;
            let gt = gt
                .map(|(v, m)| MetricDepthMap::new(dims.0, dims.1, v).map(|d| (d, m)))
                .transpose()?;
            return Ok(LoadedFrame {
                name: name.to_string(),
                image,
                camera,
                rel_depth,
                semantics,
                gt,
            });
        };

        let image = resize_bilinear(&image, nh, nw)?;
        let camera = CameraRecord {
            intrinsics: k.resized(nw, nh)?,
            pose: camera.pose,
        };
        let rel_depth = rel
            .map(|(v, m)| {
                // Resample in the depth domain so disparity inversion happens once.
                let r = RelativeDepthMap::with_mask(dims.0, dims.1, v, e.depth_convention, m)?;
                let (v, m) = resize_masked(r.values(), r.valid(), nh, nw)?;
                RelativeDepthMap::with_mask(nh, nw, v, DepthConvention::Depth, m)
            })
            .transpose()?;
        let semantics = semantics
            .map(|s| {
                let labels = resize_nearest(s.labels(), dims, nh, nw)?;
                SemanticMap::new(nh, nw, s.num_classes(), labels)
            })
            .transpose()?;
        let gt = gt
            .map(|(v, m)| {
                let (v, m) = resize_masked(&v, &m, nh, nw)?;
                Ok::<_, Error>((MetricDepthMap::new(nh, nw, v)?, m))
            })
            .transpose()?;
        Ok(LoadedFrame {
            name: name.to_string(),
            image,
            camera,
            rel_depth,
            semantics,
            gt,
        })
    }

    /// Assembles the calibration problem for target frame `name`. Moving
    /// classes are masked out when the frame has semantics.
    pub fn load_bundle(
        &self,
        name: &str,
        resize: Option<[usize; 2]>,
        moving_classes: &BTreeSet<u8>,
    ) -> Result<(FrameBundle, LoadedFrame)> {
        let entry = self.entry(name)?;
        let target = self.load_frame(name, resize)?;
        let rel_depth = target
            .rel_depth
            .clone()
            .ok_or_else(|| Error::Config(format!("frame `{name}` has no relative depth")))?;
        let (h, w) = target.image.dims();
        let mut sources = Vec::with_capacity(entry.sources.len());
        for s in &entry.sources {
            let src = self.load_frame(s, resize)?;
            check_same_camera(name, &target.camera.intrinsics, s, &src.camera.intrinsics)?;
            sources.push(SourceView {
                image: src.image,
                pose: src.camera.pose,
            });
        }
        let static_mask = match &target.semantics {
            Some(sem) => moving_object_mask(sem, moving_classes),
            None => ValidityMask::full(h, w, true),
        };
        let bundle = FrameBundle {
            target: target.image.clone(),
            intrinsics: target.camera.intrinsics,
            target_pose: target.camera.pose,
            sources,
            rel_depth,
            static_mask,
        };
        bundle.validate()?;
        Ok((bundle, target))
    }
}

fn check_same_camera(t: &str, kt: &CameraIntrinsics, s: &str, ks: &CameraIntrinsics) -> Result<()> {
    if kt != ks {
        return Err(Error::Dimension(format!(
            "source `{s}` has intrinsics {ks:?}, target `{t}` has {kt:?}; views must share one camera"
        )));
    }
    Ok(())
}
