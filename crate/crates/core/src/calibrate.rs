//! Two-stage calibration of relative depth into metric depth.
//!
//! Metric depth is modelled per pixel as `d = λ(p)·d_rel(p) + γ`. Stage one
//! sweeps a single integer scene scale (λ constant, γ = 0) and keeps the one
//! whose view synthesis best reconstructs the target. Stage two starts every
//! pixel at that scale and refines the full λ field together with γ by AdamW
//! on `w_rec·L1 + w_ssim·L_ssim`, averaged over source views.

use std::collections::BTreeSet;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PixelCoord, Pose, Warp};
use crate::imgproc::{self, Image, SsimForm, ValidityMask};
use crate::optim::AdamW;
use crate::semantics::SemanticMap;

/// Floor applied to disparities before inversion.
pub const DISPARITY_FLOOR: f64 = 1e-6;
/// Floor applied to λ after every optimizer step.
pub const LAMBDA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthConvention {
    #[default]
    Depth,
    Disparity,
}

/// Relative depth up to an unknown affine transform. Always depth-like once
/// constructed; disparities are inverted on the way in.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeDepthMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    valid: ValidityMask,
}

impl RelativeDepthMap {
    pub fn new(
        height: usize,
        width: usize,
        values: Vec<f64>,
        convention: DepthConvention,
    ) -> Result<Self> {
        let valid = ValidityMask::full(height, width, true);
        Self::with_mask(height, width, values, convention, valid)
    }

    /// As [`RelativeDepthMap::new`], with pixels that carry no usable
    /// relative depth (for example sky) flagged off in `valid`.
    pub fn with_mask(
        height: usize,
        width: usize,
        mut values: Vec<f64>,
        convention: DepthConvention,
        valid: ValidityMask,
    ) -> Result<Self> {
        if values.len() != height * width || valid.dims() != (height, width) {
            return Err(Error::Dimension(format!(
                "relative depth has {} values and mask {:?}, expected {height}x{width}",
                values.len(),
                valid.dims()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Domain(format!(
                "relative depth value {bad} is not a finite non-negative number"
            )));
        }
        if convention == DepthConvention::Disparity {
            values
                .iter_mut()
                .for_each(|v| *v = 1.0 / v.max(DISPARITY_FLOOR));
        }
        Ok(RelativeDepthMap {
            height,
            width,
            values,
            valid,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn valid(&self) -> &ValidityMask {
        &self.valid
    }
}

/// Depth in meters; pixels flagged off in the companion mask carry 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricDepthMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl MetricDepthMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Dimension(format!(
                "depth map has {} values, expected {height}x{width}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("depth map contains non-finite values".into()));
        }
        Ok(MetricDepthMap {
            height,
            width,
            values,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceView {
    pub image: Image,
    pub pose: Pose,
}

/// A target view, its source views and the relative depth to calibrate.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBundle {
    pub target: Image,
    pub intrinsics: CameraIntrinsics,
    pub target_pose: Pose,
    pub sources: Vec<SourceView>,
    pub rel_depth: RelativeDepthMap,
    pub static_mask: ValidityMask,
}

impl FrameBundle {
    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::Domain(
                "frame bundle needs at least one source view".into(),
            ));
        }
        let dims = self.target.dims();
        let k = &self.intrinsics;
        if (k.height, k.width) != dims {
            return Err(Error::Dimension(format!(
                "intrinsics describe {}x{} but target image is {}x{}",
                k.height, k.width, dims.0, dims.1
            )));
        }
        for (i, s) in self.sources.iter().enumerate() {
            if s.image.dims() != dims || s.image.channels() != self.target.channels() {
                return Err(Error::Dimension(format!(
                    "source {i} is {}x{}x{}, target is {}x{}x{}",
                    s.image.height(),
                    s.image.width(),
                    s.image.channels(),
                    dims.0,
                    dims.1,
                    self.target.channels()
                )));
            }
        }
        if self.rel_depth.dims() != dims || self.static_mask.dims() != dims {
            return Err(Error::Dimension(format!(
                "relative depth {:?} / static mask {:?} do not match image {:?}",
                self.rel_depth.dims(),
                self.static_mask.dims(),
                dims
            )));
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        self.target.dims()
    }
}

/// Scale field, offset and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibState {
    height: usize,
    width: usize,
    pub lambda: Vec<f64>,
    pub gamma: f64,
    pub lambda_m: Vec<f64>,
    pub lambda_v: Vec<f64>,
    pub gamma_m: f64,
    pub gamma_v: f64,
    pub step: u64,
}

impl CalibState {
    pub fn uniform(height: usize, width: usize, scale: f64, gamma: f64) -> Self {
        let n = height * width;
        CalibState {
            height,
            width,
            lambda: vec![scale; n],
            gamma,
            lambda_m: vec![0.0; n],
            lambda_v: vec![0.0; n],
            gamma_m: 0.0,
            gamma_v: 0.0,
            step: 0,
        }
    }

    pub fn from_fields(height: usize, width: usize, lambda: Vec<f64>, gamma: f64) -> Result<Self> {
        if lambda.len() != height * width {
            return Err(Error::Dimension(format!(
                "scale field has {} values, expected {height}x{width}",
                lambda.len()
            )));
        }
        if lambda.iter().any(|l| !(l.is_finite() && *l > 0.0)) || !gamma.is_finite() {
            return Err(Error::Domain(
                "scale field must be finite and positive".into(),
            ));
        }
        let mut s = Self::uniform(height, width, 1.0, gamma);
        s.lambda = lambda;
        Ok(s)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

fn default_scale_min() -> u32 {
    1
}
fn default_scale_max() -> u32 {
    100
}
fn default_iterations() -> usize {
    5000
}
fn default_learning_rate() -> f64 {
    1e-5
}
fn default_half() -> f64 {
    0.5
}
fn default_min_depth() -> f64 {
    1e-3
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibConfig {
    #[serde(default = "default_scale_min")]
    pub scale_min: u32,
    #[serde(default = "default_scale_max")]
    pub scale_max: u32,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_half")]
    pub w_rec: f64,
    #[serde(default = "default_half")]
    pub w_ssim: f64,
    #[serde(default = "default_min_depth")]
    pub min_depth: f64,
    #[serde(default)]
    pub ssim_form: SsimForm,
    /// Apply the static (moving-object) mask during the scale sweep as well.
    #[serde(default = "default_true")]
    pub mask_in_search: bool,
    /// Label IDs treated as moving objects when building static masks.
    #[serde(default)]
    pub moving_classes: BTreeSet<u8>,
    /// Optional `[height, width]` to resample frames to before calibrating.
    #[serde(default)]
    pub resize: Option<[usize; 2]>,
}

impl Default for CalibConfig {
    fn default() -> Self {
        CalibConfig {
            scale_min: default_scale_min(),
            scale_max: default_scale_max(),
            iterations: default_iterations(),
            learning_rate: default_learning_rate(),
            weight_decay: 0.0,
            w_rec: 0.5,
            w_ssim: 0.5,
            min_depth: default_min_depth(),
            ssim_form: SsimForm::Negative,
            mask_in_search: true,
            moving_classes: BTreeSet::new(),
            resize: None,
        }
    }
}

impl CalibConfig {
    pub fn scale_grid(&self) -> RangeInclusive<u32> {
        self.scale_min..=self.scale_max
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.scale_min == 0 || self.scale_min > self.scale_max {
            return bad("scale grid must be a non-empty range of positive integers");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if !(self.w_rec >= 0.0 && self.w_ssim >= 0.0 && self.w_rec + self.w_ssim > 0.0) {
            return bad("loss weights must be non-negative with a positive sum");
        }
        if !(self.min_depth > 0.0 && self.min_depth.is_finite()) {
            return bad("min_depth must be positive");
        }
        if let Some([h, w]) = self.resize {
            if h < 3 || w < 3 {
                return bad("resize target must be at least 3x3");
            }
        }
        Ok(())
    }

    fn optimizer(&self) -> AdamW {
        AdamW::new(self.learning_rate, self.weight_decay)
    }
}

/// `d = λ·d_rel + γ`; pixels below `min_depth` (or without relative depth)
/// are flagged invalid and stored as 0.
pub fn apply_affine(
    rel: &RelativeDepthMap,
    state: &CalibState,
    min_depth: f64,
) -> Result<(MetricDepthMap, ValidityMask)> {
    if rel.dims() != state.dims() {
        return Err(Error::Dimension(format!(
            "relative depth {:?} does not match calibration state {:?}",
            rel.dims(),
            state.dims()
        )));
    }
    let (h, w) = rel.dims();
    let mut values = Vec::with_capacity(h * w);
    let mut valid = Vec::with_capacity(h * w);
    for i in 0..h * w {
        let d = state.lambda[i] * rel.values[i] + state.gamma;
        let ok = rel.valid.data()[i] && d.is_finite() && d >= min_depth;
        values.push(if ok { d } else { 0.0 });
        valid.push(ok);
    }
    Ok((
        MetricDepthMap {
            height: h,
            width: w,
            values,
        },
        ValidityMask::new(h, w, valid)?,
    ))
}

/// Reconstructs the target from source `source_index` using `depth`.
///
/// The returned mask excludes pixels with invalid depth, moving objects,
/// points behind the source camera and samples outside the source image.
pub fn synthesize_view(
    bundle: &FrameBundle,
    depth: &MetricDepthMap,
    depth_valid: &ValidityMask,
    source_index: usize,
) -> Result<(Image, ValidityMask)> {
    bundle.validate()?;
    let source = bundle.sources.get(source_index).ok_or_else(|| {
        Error::Domain(format!(
            "source index {source_index} out of range ({} sources)",
            bundle.sources.len()
        ))
    })?;
    let (h, w) = bundle.dims();
    if depth.dims() != (h, w) || depth_valid.dims() != (h, w) {
        return Err(Error::Dimension(format!(
            "depth {:?} does not match bundle {:?}",
            depth.dims(),
            (h, w)
        )));
    }
    let warp = Warp::new(&bundle.intrinsics, &bundle.target_pose, &source.pose);
    let c = bundle.target.channels();
    let mut out = Image::filled(h, w, c, 0.0);
    let mut mask = ValidityMask::full(h, w, false);
    for r in 0..h {
        for col in 0..w {
            if !(depth_valid.get(r, col) && bundle.static_mask.get(r, col)) {
                continue;
            }
            let p = PixelCoord::new(col as f64, r as f64);
            let Some(wp) = warp.apply(p, depth.get(r, col)) else {
                continue;
            };
            if imgproc::sample_into(&source.image, wp.pixel, out.pixel_mut(r, col)) {
                mask.set(r, col, true);
            }
        }
    }
    Ok((out, mask))
}

/// Outcome of the scene-scale sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSearch {
    pub scale: u32,
    /// Summed photometric loss per candidate, in grid order.
    pub losses: Vec<f64>,
    /// The loss curve carried no information (max − min below 1e-12).
    pub flat: bool,
}

/// Photometric loss assigned to a source view that has no valid pixel at a
/// candidate scale: the largest possible mean absolute difference.
const EMPTY_SOURCE_LOSS: f64 = 1.0;

/// Sweeps `λ ≡ s, γ = 0` over the integer scale grid and returns the
/// candidate with the smallest photometric loss summed over source views.
/// Ties go to the smaller scale.
pub fn scene_scale_search(bundle: &FrameBundle, cfg: &CalibConfig) -> Result<ScaleSearch> {
    bundle.validate()?;
    cfg.validate()?;
    let (h, w) = bundle.dims();
    let c = bundle.target.channels();
    let warps: Vec<Warp> = bundle
        .sources
        .iter()
        .map(|s| Warp::new(&bundle.intrinsics, &bundle.target_pose, &s.pose))
        .collect();
    let rel = &bundle.rel_depth;
    let mut sample = vec![0.0; c];
    let mut losses = Vec::new();
    let mut any_valid = false;
    for s in cfg.scale_grid() {
        let scale = s as f64;
        let mut total = 0.0;
        for (source, warp) in bundle.sources.iter().zip(&warps) {
            let mut sum = 0.0;
            let mut n = 0usize;
            for r in 0..h {
                for col in 0..w {
                    let i = r * w + col;
                    if !rel.valid.data()[i]
                        || (cfg.mask_in_search && !bundle.static_mask.get(r, col))
                    {
                        continue;
                    }
                    let d = scale * rel.values[i];
                    if !(d >= cfg.min_depth) {
                        continue;
                    }
                    let Some(wp) = warp.apply(PixelCoord::new(col as f64, r as f64), d) else {
                        continue;
                    };
                    if !imgproc::sample_into(&source.image, wp.pixel, &mut sample) {
                        continue;
                    }
                    let t = bundle.target.pixel(r, col);
                    sum += t
                        .iter()
                        .zip(&sample)
                        .map(|(a, b)| (a - b).abs())
                        .sum::<f64>()
                        / c as f64;
                    n += 1;
                }
            }
            if n == 0 {
                total += EMPTY_SOURCE_LOSS;
            } else {
                any_valid = true;
                total += sum / n as f64;
            }
        }
        losses.push(total);
    }
    if !any_valid {
        return Err(Error::DegenerateLoss(
            "no valid pixel at any candidate scale".into(),
        ));
    }
    let (best, _) =
        losses.iter().enumerate().fold(
            (0, f64::INFINITY),
            |(bi, bl), (i, &l)| {
                if l < bl {
                    (i, l)
                } else {
                    (bi, bl)
                }
            },
        );
    let lo = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let flat = hi - lo < 1e-12;
    if flat {
        log::warn!("scene scale loss curve is flat; poses may not differ");
    }
    Ok(ScaleSearch {
        scale: cfg.scale_min + best as u32,
        losses,
        flat,
    })
}

/// Gradient of the refinement objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub lambda: Vec<f64>,
    pub gamma: f64,
}

/// Per-pixel scratch for one source view.
struct SourceEval {
    synthesized: Image,
    mask: ValidityMask,
    /// `(∂y/∂u, ∂y/∂v)` per pixel and channel.
    sample_grad: Vec<(f64, f64)>,
    /// `(∂u/∂d, ∂v/∂d)` per pixel.
    warp_grad: Vec<(f64, f64)>,
}

fn eval_source(
    bundle: &FrameBundle,
    source: &SourceView,
    depth: &MetricDepthMap,
    depth_valid: &ValidityMask,
) -> SourceEval {
    let (h, w) = bundle.dims();
    let c = bundle.target.channels();
    let warp = Warp::new(&bundle.intrinsics, &bundle.target_pose, &source.pose);
    let mut synthesized = Image::filled(h, w, c, 0.0);
    let mut mask = ValidityMask::full(h, w, false);
    let mut sample_grad = vec![(0.0, 0.0); h * w * c];
    let mut warp_grad = vec![(0.0, 0.0); h * w];
    for r in 0..h {
        for col in 0..w {
            let i = r * w + col;
            if !(depth_valid.get(r, col) && bundle.static_mask.get(r, col)) {
                continue;
            }
            let Some(wp) = warp.apply(PixelCoord::new(col as f64, r as f64), depth.get(r, col))
            else {
                continue;
            };
            let ok = imgproc::sample_with_grad(
                &source.image,
                wp.pixel,
                synthesized.pixel_mut(r, col),
                &mut sample_grad[i * c..(i + 1) * c],
            );
            if ok {
                mask.set(r, col, true);
                warp_grad[i] = (wp.du_dd, wp.dv_dd);
            }
        }
    }
    SourceEval {
        synthesized,
        mask,
        sample_grad,
        warp_grad,
    }
}

/// Loss and, optionally, its gradient with respect to per-pixel depth.
fn evaluate(
    bundle: &FrameBundle,
    state: &CalibState,
    cfg: &CalibConfig,
    with_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let (depth, depth_valid) = apply_affine(&bundle.rel_depth, state, cfg.min_depth)?;
    let (h, w) = bundle.dims();
    let c = bundle.target.channels();
    let mut total = 0.0;
    let mut used = 0usize;
    let mut grad_d = with_grad.then(|| vec![0.0; h * w]);

    for source in &bundle.sources {
        let ev = eval_source(bundle, source, &depth, &depth_valid);
        let n = ev.mask.count();
        if n == 0 {
            continue;
        }
        let mut loss = 0.0;
        let mut grad_y = with_grad.then(|| vec![0.0; h * w * c]);
        if cfg.w_rec > 0.0 {
            let l1 = imgproc::photometric_loss(&bundle.target, &ev.synthesized, &ev.mask)?;
            loss += cfg.w_rec * l1;
            if let Some(g) = grad_y.as_mut() {
                let scale = cfg.w_rec / (n * c) as f64;
                let t = bundle.target.data();
                let y = ev.synthesized.data();
                for (i, _) in ev.mask.data().iter().enumerate().filter(|(_, &m)| m) {
                    for ch in 0..c {
                        let k = i * c + ch;
                        let diff = y[k] - t[k];
                        if diff != 0.0 {
                            g[k] += scale * diff.signum();
                        }
                    }
                }
            }
        }
        if cfg.w_ssim > 0.0 {
            let (ls, gs) = match imgproc::ssim_loss_and_grad(
                &bundle.target,
                &ev.synthesized,
                &ev.mask,
                cfg.ssim_form,
            ) {
                Ok(v) => v,
                Err(Error::DegenerateLoss(_)) => continue,
                Err(e) => return Err(e),
            };
            loss += cfg.w_ssim * ls;
            if let Some(g) = grad_y.as_mut() {
                g.iter_mut()
                    .zip(&gs)
                    .for_each(|(a, b)| *a += cfg.w_ssim * b);
            }
        }
        total += loss;
        used += 1;
        if let (Some(gd), Some(gy)) = (grad_d.as_mut(), grad_y.as_ref()) {
            for (i, _) in ev.mask.data().iter().enumerate().filter(|(_, &m)| m) {
                let (du, dv) = ev.warp_grad[i];
                let mut acc = 0.0;
                for ch in 0..c {
                    let (gu, gv) = ev.sample_grad[i * c + ch];
                    acc += gy[i * c + ch] * (gu * du + gv * dv);
                }
                // Sources are averaged below; store the raw sum here.
                gd[i] += acc;
            }
        }
    }
    if used == 0 {
        return Err(Error::DegenerateLoss(
            "no source view has a valid reconstruction".into(),
        ));
    }
    let inv = 1.0 / used as f64;
    if let Some(gd) = grad_d.as_mut() {
        gd.iter_mut().for_each(|g| *g *= inv);
    }
    Ok((total * inv, grad_d))
}

/// `w_rec·L_rec + w_ssim·L_ssim`, each averaged over source views and
/// valid pixels (windows for SSIM).
pub fn total_loss(bundle: &FrameBundle, state: &CalibState, cfg: &CalibConfig) -> Result<f64> {
    bundle.validate()?;
    Ok(evaluate(bundle, state, cfg, false)?.0)
}

fn chain_to_params(rel: &RelativeDepthMap, grad_d: &[f64]) -> LossGradient {
    // ∂d/∂λ(p) = d_rel(p), ∂d/∂γ = 1.
    let lambda = grad_d.iter().zip(&rel.values).map(|(g, r)| g * r).collect();
    let gamma = grad_d.iter().sum();
    LossGradient { lambda, gamma }
}

/// Analytic gradient of [`total_loss`] with respect to `(λ, γ)`.
pub fn loss_gradient(
    bundle: &FrameBundle,
    state: &CalibState,
    cfg: &CalibConfig,
) -> Result<LossGradient> {
    bundle.validate()?;
    let (_, grad_d) = evaluate(bundle, state, cfg, true)?;
    Ok(chain_to_params(
        &bundle.rel_depth,
        &grad_d.unwrap_or_default(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub state: CalibState,
    /// Objective before each step, followed by the objective after the last.
    pub trace: Vec<f64>,
}

/// Stage two: AdamW on `(λ, γ)` from `λ ≡ scale_hat, γ = 0`.
pub fn refine(bundle: &FrameBundle, scale_hat: f64, cfg: &CalibConfig) -> Result<Refinement> {
    bundle.validate()?;
    cfg.validate()?;
    if !(scale_hat > 0.0 && scale_hat.is_finite()) {
        return Err(Error::Domain(format!(
            "initial scale {scale_hat} must be positive"
        )));
    }
    let (h, w) = bundle.dims();
    let mut state = CalibState::uniform(h, w, scale_hat, 0.0);
    if cfg.iterations == 0 {
        return Ok(Refinement {
            state,
            trace: Vec::new(),
        });
    }
    let opt = cfg.optimizer();
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    for it in 0..cfg.iterations {
        let (loss, grad_d) = evaluate(bundle, &state, cfg, true)?;
        let grad = chain_to_params(&bundle.rel_depth, &grad_d.unwrap_or_default());
        if !loss.is_finite()
            || !grad.gamma.is_finite()
            || grad.lambda.iter().any(|g| !g.is_finite())
        {
            return Err(Error::Divergence {
                step: it,
                detail: format!("non-finite objective or gradient (loss = {loss})"),
            });
        }
        trace.push(loss);
        state.step += 1;
        opt.step(
            state.step,
            &mut state.lambda,
            &grad.lambda,
            &mut state.lambda_m,
            &mut state.lambda_v,
        );
        let mut gamma = [state.gamma];
        let mut gm = [state.gamma_m];
        let mut gv = [state.gamma_v];
        opt.step(state.step, &mut gamma, &[grad.gamma], &mut gm, &mut gv);
        state.gamma = gamma[0];
        state.gamma_m = gm[0];
        state.gamma_v = gv[0];
        state
            .lambda
            .iter_mut()
            .for_each(|l| *l = l.max(LAMBDA_FLOOR));
    }
    let last = evaluate(bundle, &state, cfg, false)?.0;
    if !last.is_finite() {
        return Err(Error::Divergence {
            step: cfg.iterations,
            detail: format!("non-finite final objective ({last})"),
        });
    }
    trace.push(last);
    Ok(Refinement { state, trace })
}

/// Full calibration result for one target frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub search: ScaleSearch,
    pub refinement: Refinement,
    pub depth: MetricDepthMap,
    pub valid: ValidityMask,
}

/// Scene-scale sweep followed by refinement.
pub fn calibrate(bundle: &FrameBundle, cfg: &CalibConfig) -> Result<Calibration> {
    let search = scene_scale_search(bundle, cfg)?;
    let refinement = refine(bundle, search.scale as f64, cfg)?;
    let (depth, valid) = apply_affine(&bundle.rel_depth, &refinement.state, cfg.min_depth)?;
    Ok(Calibration {
        search,
        refinement,
        depth,
        valid,
    })
}

/// False exactly at pixels whose label is a moving class.
pub fn moving_object_mask(sem: &SemanticMap, moving_classes: &BTreeSet<u8>) -> ValidityMask {
    let (h, w) = sem.dims();
    let data = sem
        .labels()
        .iter()
        .map(|l| !moving_classes.contains(l))
        .collect();
    ValidityMask::new(h, w, data).expect("label count matches dims")
}
