//! `synth`, `calibrate`, `fuse` and `eval` over a directory of frames.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{calibrate, CalibConfig, MetricDepthMap};
use crate::error::{Error, Result};
use crate::imgproc::ValidityMask;
use crate::metrics::{evaluate, MetricsReport};
use crate::synthworld::{make_bundle, SceneSpec};
use crate::voxelfuse::{
    frame_votes, grid_to_points, FusionFrame, VoteGrid, VoxelGrid, VoxelGridConfig,
};

use super::camera::{write_camera, CameraRecord};
use super::manifest::{
    image_tensor, mask_tensor, read_mask, read_scalar_map, scalar_tensor, Dataset, FrameEntry,
    Manifest,
};
use super::tensor::{read_tensor, write_tensor, Tensor, TensorData};
use super::write_atomic;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const GRID_FILE: &str = "grid.pvxt";
pub const VOTES_FILE: &str = "votes.pvxt";
pub const GRID_CONFIG_FILE: &str = "grid.toml";
pub const POINTS_FILE: &str = "points.txt";
pub const METRICS_FILE: &str = "metrics.json";

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        return Err(Error::Config("--workers must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| Error::format(path, e.to_string()))?;
    write_text(path, &text)
}

pub fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
}

/// Renders a synthetic scene into a frame set under `out`: the target view
/// (with corrupted relative depth) and one frame per source view, each with
/// image, camera, semantics and ground-truth depth. The true scale field is
/// written to `gt/target.lambda.pvxt` and `gt/corruption.toml`.
pub fn synth(spec: &SceneSpec, out: &Path) -> Result<Manifest> {
    let frame = make_bundle(spec)?;
    let k = frame.bundle.intrinsics;
    let dims = (spec.height, spec.width);
    let rel = |p: &str| PathBuf::from(p);
    let mut frames = Vec::new();

    let source_names: Vec<String> = (0..spec.sources.len())
        .map(|i| format!("source{i}"))
        .collect();
    let views = std::iter::once((
        "target".to_string(),
        &frame.bundle.target,
        frame.bundle.target_pose,
        &frame.semantics,
        &frame.gt_depth,
        &frame.gt_valid,
    ))
    .chain(
        source_names
            .iter()
            .zip(&frame.source_renders)
            .zip(&frame.bundle.sources)
            .map(|((name, r), s)| {
                (
                    name.clone(),
                    &r.image,
                    s.pose,
                    &r.semantics,
                    &r.depth,
                    &r.valid,
                )
            }),
    );

    for (name, image, pose, sem, depth, valid) in views {
        let f = |suffix: &str| format!("frames/{name}.{suffix}");
        let g = |suffix: &str| format!("gt/{name}.{suffix}");
        write_tensor(&out.join(f("image.pvxt")), &image_tensor(image)?)?;
        write_camera(
            &out.join(f("camera.txt")),
            &CameraRecord {
                intrinsics: k,
                pose,
            },
        )?;
        write_tensor(
            &out.join(f("sem.pvxt")),
            &Tensor::u8(vec![dims.0, dims.1], sem.labels().to_vec())?,
        )?;
        write_tensor(
            &out.join(g("depth.pvxt")),
            &scalar_tensor(dims, depth.values())?,
        )?;
        write_tensor(&out.join(g("valid.pvxt")), &mask_tensor(valid)?)?;
        frames.push(FrameEntry {
            name: name.clone(),
            image: rel(&f("image.pvxt")),
            camera: rel(&f("camera.txt")),
            rel_depth: None,
            rel_valid: None,
            depth_convention: Default::default(),
            semantics: Some(rel(&f("sem.pvxt"))),
            features: None,
            gt_depth: Some(rel(&g("depth.pvxt"))),
            gt_valid: Some(rel(&g("valid.pvxt"))),
            sources: Vec::new(),
        });
    }

    let rd = &frame.bundle.rel_depth;
    write_tensor(
        &out.join("frames/target.rel.pvxt"),
        &scalar_tensor(dims, rd.values())?,
    )?;
    write_tensor(
        &out.join("frames/target.relvalid.pvxt"),
        &mask_tensor(rd.valid())?,
    )?;
    frames[0].rel_depth = Some(rel("frames/target.rel.pvxt"));
    frames[0].rel_valid = Some(rel("frames/target.relvalid.pvxt"));
    frames[0].sources = source_names;

    write_tensor(
        &out.join("gt/target.lambda.pvxt"),
        &scalar_tensor(dims, &frame.lambda_star)?,
    )?;
    write_toml(&out.join("gt/corruption.toml"), &spec.corruption)?;
    write_toml(&out.join("scene.toml"), spec)?;

    let manifest = Manifest {
        num_classes: Some(spec.num_classes),
        embeddings: None,
        frames,
    };
    Dataset {
        root: out.to_path_buf(),
        manifest: manifest.clone(),
    }
    .write(&out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Per-frame summary written to `<frame>.calib.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibSummary {
    pub frame: String,
    pub height: usize,
    pub width: usize,
    pub scale: u32,
    pub flat_curve: bool,
    pub gamma: f64,
    pub lambda_mean: f64,
    pub iterations: usize,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
}

fn calibrate_frame(
    ds: &Dataset,
    name: &str,
    cfg: &CalibConfig,
    out: &Path,
) -> Result<CalibSummary> {
    let (bundle, _) = ds.load_bundle(name, cfg.resize, &cfg.moving_classes)?;
    let c = calibrate(&bundle, cfg)?;
    let dims = bundle.dims();
    let file = |suffix: &str| out.join(format!("{name}.{suffix}"));
    write_tensor(&file("depth.pvxt"), &scalar_tensor(dims, c.depth.values())?)?;
    write_tensor(&file("valid.pvxt"), &mask_tensor(&c.valid)?)?;
    write_tensor(
        &file("lambda.pvxt"),
        &scalar_tensor(dims, &c.refinement.state.lambda)?,
    )?;

    let mut curve = String::from("scale,loss\n");
    for (s, l) in cfg.scale_grid().zip(&c.search.losses) {
        writeln!(curve, "{s},{l}").unwrap();
    }
    write_text(&file("scale_curve.csv"), &curve)?;
    let mut trace = String::from("step,loss\n");
    for (i, l) in c.refinement.trace.iter().enumerate() {
        writeln!(trace, "{i},{l}").unwrap();
    }
    write_text(&file("trace.csv"), &trace)?;

    let lambda = &c.refinement.state.lambda;
    let summary = CalibSummary {
        frame: name.to_string(),
        height: dims.0,
        width: dims.1,
        scale: c.search.scale,
        flat_curve: c.search.flat,
        gamma: c.refinement.state.gamma,
        lambda_mean: lambda.iter().sum::<f64>() / lambda.len() as f64,
        iterations: cfg.iterations,
        initial_loss: c.refinement.trace.first().copied(),
        final_loss: c.refinement.trace.last().copied(),
    };
    if summary.flat_curve {
        log::warn!(
            "{name}: scale curve is flat; picked the smallest scale {}",
            summary.scale
        );
    }
    write_toml(&file("calib.toml"), &summary)?;
    log::info!(
        "{name}: scale {} gamma {:.4} loss {:?} -> {:?}",
        summary.scale,
        summary.gamma,
        summary.initial_loss,
        summary.final_loss
    );
    Ok(summary)
}

/// Calibrates every target frame of the manifest in parallel. Output files
/// depend only on the inputs, not on `workers`.
pub fn calibrate_all(
    ds: &Dataset,
    cfg: &CalibConfig,
    out: &Path,
    workers: usize,
) -> Result<Vec<CalibSummary>> {
    cfg.validate()?;
    let names: Vec<&str> = ds.targets().map(|f| f.name.as_str()).collect();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let results: Vec<Result<CalibSummary>> = pool(workers)?.install(|| {
        names
            .par_iter()
            .map(|n| calibrate_frame(ds, n, cfg, out))
            .collect()
    });
    results.into_iter().collect()
}

/// Where fused depth comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DepthSource {
    /// `<frame>.depth.pvxt` and `<frame>.valid.pvxt` in this directory.
    Calibrated(PathBuf),
    /// The ground-truth depth listed in the manifest.
    GroundTruth,
}

/// Summary of a fusion run.
#[derive(Debug, Clone, PartialEq)]
pub struct FuseSummary {
    pub frames: Vec<String>,
    pub votes: VoteGrid,
    pub grid: VoxelGrid,
}

fn frame_depth(
    ds: &Dataset,
    name: &str,
    source: &DepthSource,
) -> Result<(MetricDepthMap, ValidityMask, Option<[usize; 2]>)> {
    match source {
        DepthSource::Calibrated(dir) => {
            let dp = dir.join(format!("{name}.depth.pvxt"));
            let (h, w, v) = read_scalar_map(&dp)?;
            let mask = read_mask(&dir.join(format!("{name}.valid.pvxt")))?;
            if mask.dims() != (h, w) {
                return Err(Error::Dimension(format!(
                    "{name}: calibrated depth is {h}x{w}, mask {:?}",
                    mask.dims()
                )));
            }
            Ok((MetricDepthMap::new(h, w, v)?, mask, Some([h, w])))
        }
        DepthSource::GroundTruth => {
            let f = ds.load_frame(name, None)?;
            let (d, m) =
                f.gt.ok_or_else(|| Error::Config(format!("frame `{name}` has no gt_depth")))?;
            Ok((d, m, None))
        }
    }
}

fn fuse_frame(
    ds: &Dataset,
    name: &str,
    source: &DepthSource,
    cfg: &VoxelGridConfig,
) -> Result<VoteGrid> {
    let (depth, valid, size) = frame_depth(ds, name, source)?;
    let frame = ds.load_frame(name, size)?;
    let sem = frame
        .semantics
        .as_ref()
        .ok_or_else(|| Error::Config(format!("frame `{name}` has no semantics to fuse")))?;
    frame_votes(
        &FusionFrame {
            depth: &depth,
            valid: &valid,
            semantics: sem,
            intrinsics: &frame.camera.intrinsics,
            pose: &frame.camera.pose,
        },
        cfg,
    )
}

/// Fuses every target frame into a labelled voxel grid and writes
/// `grid.pvxt` (uint8 X×Y×Z, 255 = free), `votes.pvxt` (uint32 X×Y×Z×K),
/// `grid.toml` and `points.txt` (`x y z label` per occupied voxel).
pub fn fuse_all(
    ds: &Dataset,
    cfg: &VoxelGridConfig,
    source: &DepthSource,
    out: &Path,
    workers: usize,
) -> Result<FuseSummary> {
    cfg.validate()?;
    let names: Vec<String> = ds.targets().map(|f| f.name.clone()).collect();
    let per_frame: Vec<Result<VoteGrid>> = pool(workers)?.install(|| {
        names
            .par_iter()
            .map(|n| fuse_frame(ds, n, source, cfg))
            .collect()
    });
    let mut votes = VoteGrid::zeros(cfg.dims, cfg.num_classes);
    for v in per_frame {
        votes.merge(&v?)?;
    }
    let grid = votes.to_labels(cfg.min_votes);

    let [x, y, z] = cfg.dims;
    write_tensor(
        &out.join(GRID_FILE),
        &Tensor::u8(vec![x, y, z], grid.labels().to_vec())?,
    )?;
    write_tensor(
        &out.join(VOTES_FILE),
        &Tensor::new(
            vec![x, y, z, cfg.num_classes],
            TensorData::U32(votes.counts().to_vec()),
        )?,
    )?;
    write_toml(&out.join(GRID_CONFIG_FILE), cfg)?;
    let mut pts = String::new();
    for (p, l) in grid_to_points(&grid, cfg) {
        writeln!(pts, "{} {} {} {l}", p.x, p.y, p.z).unwrap();
    }
    write_text(&out.join(POINTS_FILE), &pts)?;
    log::info!(
        "fused {} frames, {} occupied voxels",
        names.len(),
        grid.occupied()
    );
    Ok(FuseSummary {
        frames: names,
        votes,
        grid,
    })
}

pub fn read_grid(path: &Path) -> Result<VoxelGrid> {
    let t = read_tensor(path)?;
    t.expect_rank(3, path)?;
    VoxelGrid::new([t.dims[0], t.dims[1], t.dims[2]], t.as_u8(path)?.to_vec())
}

/// Class count for evaluating `pred`: the explicit value, else the one in
/// the `grid.toml` written next to it.
pub fn resolve_num_classes(pred: &Path, explicit: Option<usize>) -> Result<usize> {
    if let Some(k) = explicit {
        return Ok(k);
    }
    let cfg_path = pred.with_file_name(GRID_CONFIG_FILE);
    if !cfg_path.exists() {
        return Err(Error::Config(format!(
            "class count unknown: pass --classes or provide {}",
            cfg_path.display()
        )));
    }
    Ok(read_toml::<VoxelGridConfig>(&cfg_path)?.num_classes)
}

/// Scores a predicted grid against a ground-truth grid and writes
/// `metrics.json` under `out`.
pub fn eval(
    pred: &Path,
    gt: &Path,
    num_classes: Option<usize>,
    ignore: &BTreeSet<u8>,
    out: &Path,
) -> Result<MetricsReport> {
    let k = resolve_num_classes(pred, num_classes)?;
    let report = evaluate(&read_grid(pred)?, &read_grid(gt)?, k, ignore)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_text(&out.join(METRICS_FILE), &(json + "\n"))?;
    Ok(report)
}
