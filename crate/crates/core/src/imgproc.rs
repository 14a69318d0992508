//! Images, validity masks, differentiable bilinear resampling and the two
//! photometric losses (masked L1 and 3×3 SSIM) with analytic gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PixelCoord;

pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

/// Row-major image with 1 or 3 interleaved channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Dimension(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "image data has {} values, expected {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        if let Some(bad) = data
            .iter()
            .find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(Error::Domain(format!("image value {bad} outside [0, 1]")));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![value.clamp(0.0, 1.0); height * width * channels],
        }
    }

    /// Builds an image from a per-pixel function; values are clamped to `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch).clamp(0.0, 1.0));
                }
            }
        }
        Image {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub(crate) fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let i = (row * self.width + col) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    fn check_same_shape(&self, other: &Image) -> Result<()> {
        if self.height != other.height
            || self.width != other.width
            || self.channels != other.channels
        {
            return Err(Error::Dimension(format!(
                "image shapes differ: {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )));
        }
        Ok(())
    }
}

/// Per-pixel inclusion flags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl ValidityMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "mask has {} entries, expected {}x{}",
                data.len(),
                height,
                width
            )));
        }
        Ok(ValidityMask {
            height,
            width,
            data,
        })
    }

    pub fn full(height: usize, width: usize, value: bool) -> Self {
        ValidityMask {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &ValidityMask) -> Result<ValidityMask> {
        if self.dims() != other.dims() {
            return Err(Error::Dimension(format!(
                "mask shapes differ: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(ValidityMask {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| *a && *b)
                .collect(),
        })
    }

    fn check_matches(&self, img: &Image) -> Result<()> {
        if self.dims() != img.dims() {
            return Err(Error::Dimension(format!(
                "mask {:?} does not match image {:?}",
                self.dims(),
                img.dims()
            )));
        }
        Ok(())
    }
}

/// Cell location and interpolation weights of a continuous sample position.
#[derive(Debug, Clone, Copy)]
struct Cell {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: f64,
    fy: f64,
}

impl Cell {
    #[inline]
    fn locate(img: &Image, p: PixelCoord) -> Option<Cell> {
        let max_u = (img.width - 1) as f64;
        let max_v = (img.height - 1) as f64;
        const EDGE_TOL: f64 = 1e-9;
        if !(p.u >= -EDGE_TOL
            && p.u <= max_u + EDGE_TOL
            && p.v >= -EDGE_TOL
            && p.v <= max_v + EDGE_TOL)
        {
            return None;
        }
        let p = PixelCoord::new(p.u.clamp(0.0, max_u), p.v.clamp(0.0, max_v));
        let x0 = (p.u.floor() as usize).min(img.width.saturating_sub(2));
        let y0 = (p.v.floor() as usize).min(img.height.saturating_sub(2));
        Some(Cell {
            x0,
            x1: (x0 + 1).min(img.width - 1),
            y0,
            y1: (y0 + 1).min(img.height - 1),
            fx: p.u - x0 as f64,
            fy: p.v - y0 as f64,
        })
    }

    #[inline]
    fn corners(&self, img: &Image, ch: usize) -> [f64; 4] {
        [
            img.get(self.y0, self.x0, ch),
            img.get(self.y0, self.x1, ch),
            img.get(self.y1, self.x0, ch),
            img.get(self.y1, self.x1, ch),
        ]
    }

    #[inline]
    fn value(&self, img: &Image, ch: usize) -> f64 {
        let [a, b, c, d] = self.corners(img, ch);
        let top = a + (b - a) * self.fx;
        let bottom = c + (d - c) * self.fx;
        top + (bottom - top) * self.fy
    }

    #[inline]
    fn gradient(&self, img: &Image, ch: usize) -> (f64, f64) {
        let [a, b, c, d] = self.corners(img, ch);
        let du = (1.0 - self.fy) * (b - a) + self.fy * (d - c);
        let dv = (1.0 - self.fx) * (c - a) + self.fx * (d - b);
        (du, dv)
    }
}

/// Bilinear sample of every channel at `p`. Outside `[0, W−1]×[0, H−1]` the
/// value is zero and `in_bounds` is false.
pub fn bilinear_sample(img: &Image, p: PixelCoord) -> (Vec<f64>, bool) {
    let mut out = vec![0.0; img.channels];
    let ok = sample_into(img, p, &mut out);
    (out, ok)
}

/// Derivative of [`bilinear_sample`] with respect to `(u, v)`, per channel.
pub fn bilinear_sample_grad(img: &Image, p: PixelCoord) -> Vec<(f64, f64)> {
    match Cell::locate(img, p) {
        Some(cell) => (0..img.channels).map(|ch| cell.gradient(img, ch)).collect(),
        None => vec![(0.0, 0.0); img.channels],
    }
}

/// Allocation-free variant of [`bilinear_sample`].
#[inline]
pub fn sample_into(img: &Image, p: PixelCoord, out: &mut [f64]) -> bool {
    match Cell::locate(img, p) {
        Some(cell) => {
            for (ch, o) in out.iter_mut().enumerate() {
                *o = cell.value(img, ch);
            }
            true
        }
        None => {
            out.fill(0.0);
            false
        }
    }
}

/// Samples values and `(∂/∂u, ∂/∂v)` together; returns false out of bounds.
#[inline]
pub(crate) fn sample_with_grad(
    img: &Image,
    p: PixelCoord,
    value: &mut [f64],
    grad: &mut [(f64, f64)],
) -> bool {
    match Cell::locate(img, p) {
        Some(cell) => {
            for ch in 0..img.channels {
                value[ch] = cell.value(img, ch);
                grad[ch] = cell.gradient(img, ch);
            }
            true
        }
        None => {
            value.fill(0.0);
            grad.fill((0.0, 0.0));
            false
        }
    }
}

/// Mean over masked-in pixels of the channel-averaged absolute difference.
pub fn photometric_loss(target: &Image, synthesized: &Image, mask: &ValidityMask) -> Result<f64> {
    target.check_same_shape(synthesized)?;
    mask.check_matches(target)?;
    let n = mask.count();
    if n == 0 {
        return Err(Error::DegenerateLoss(
            "photometric loss over an empty mask".into(),
        ));
    }
    let c = target.channels;
    let mut total = 0.0;
    for (i, _) in mask.data.iter().enumerate().filter(|(_, &m)| m) {
        let a = &target.data[i * c..(i + 1) * c];
        let b = &synthesized.data[i * c..(i + 1) * c];
        total += a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / c as f64;
    }
    Ok(total / n as f64)
}

/// How the SSIM index enters the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsimForm {
    /// `L = −SSIM`, in `[−1, 1]`.
    #[default]
    Negative,
    /// `L = (1 − SSIM) / 2`, in `[0, 1]`.
    HalfComplement,
}

impl SsimForm {
    pub fn loss(self, ssim: f64) -> f64 {
        match self {
            SsimForm::Negative => -ssim,
            SsimForm::HalfComplement => 0.5 * (1.0 - ssim),
        }
    }

    /// `∂L/∂SSIM`.
    pub fn slope(self) -> f64 {
        match self {
            SsimForm::Negative => -1.0,
            SsimForm::HalfComplement => -0.5,
        }
    }
}

/// A 3×3 window is usable when it lies fully inside the image and every
/// pixel in it is masked in.
fn valid_windows(mask: &ValidityMask) -> Vec<(usize, usize)> {
    let (h, w) = mask.dims();
    let mut out = Vec::new();
    if h < 3 || w < 3 {
        return out;
    }
    for r in 1..h - 1 {
        'win: for c in 1..w - 1 {
            for dr in 0..3 {
                for dc in 0..3 {
                    if !mask.get(r + dr - 1, c + dc - 1) {
                        continue 'win;
                    }
                }
            }
            out.push((r, c));
        }
    }
    out
}

/// Evaluates mean SSIM and, when `grad` is given, accumulates `∂SSIM/∂y`
/// into it (same layout as `y`).
fn ssim_core(
    x: &Image,
    y: &Image,
    mask: &ValidityMask,
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    x.check_same_shape(y)?;
    mask.check_matches(x)?;
    let windows = valid_windows(mask);
    if windows.is_empty() {
        return Err(Error::DegenerateLoss(
            "no fully valid 3x3 SSIM window".into(),
        ));
    }
    let channels = x.channels;
    let norm = 1.0 / (windows.len() * channels) as f64;
    let mut total = 0.0;
    for &(r, c) in &windows {
        for ch in 0..channels {
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for rr in r - 1..=r + 1 {
                for cc in c - 1..=c + 1 {
                    let a = x.get(rr, cc, ch);
                    let b = y.get(rr, cc, ch);
                    sx += a;
                    sy += b;
                    sxx += a * a;
                    syy += b * b;
                    sxy += a * b;
                }
            }
            let (mx, my) = (sx / 9.0, sy / 9.0);
            let vx = sxx / 9.0 - mx * mx;
            let vy = syy / 9.0 - my * my;
            let cxy = sxy / 9.0 - mx * my;
            let a = 2.0 * mx * my + SSIM_C1;
            let b = 2.0 * cxy + SSIM_C2;
            let den_l = mx * mx + my * my + SSIM_C1;
            let den_c = vx + vy + SSIM_C2;
            let s = a * b / (den_l * den_c);
            total += s;

            if let Some(g) = grad.as_deref_mut() {
                // Derivatives with respect to the raw window moments of y:
                // mean(y), mean(y²) and mean(xy).
                let den = den_l * den_c;
                let d_my =
                    (2.0 * mx * b - 2.0 * mx * a) / den - s * (2.0 * my / den_l - 2.0 * my / den_c);
                let d_myy = -s / den_c;
                let d_mxy = 2.0 * a / den;
                for rr in r - 1..=r + 1 {
                    for cc in c - 1..=c + 1 {
                        let xv = x.get(rr, cc, ch);
                        let yv = y.get(rr, cc, ch);
                        let dv = (d_my + 2.0 * yv * d_myy + xv * d_mxy) / 9.0;
                        g[(rr * x.width + cc) * channels + ch] += dv * norm;
                    }
                }
            }
        }
    }
    Ok(total * norm)
}

/// Mean 3×3-window SSIM between `x` and `y` over fully valid windows,
/// averaged across channels.
pub fn ssim(x: &Image, y: &Image, mask: &ValidityMask) -> Result<f64> {
    ssim_core(x, y, mask, None)
}

/// SSIM loss under `form` and its gradient with respect to `y`.
pub fn ssim_loss_and_grad(
    x: &Image,
    y: &Image,
    mask: &ValidityMask,
    form: SsimForm,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; y.data.len()];
    let s = ssim_core(x, y, mask, Some(&mut grad))?;
    let slope = form.slope();
    grad.iter_mut().for_each(|g| *g *= slope);
    Ok((form.loss(s), grad))
}

/// Position in the input grid of output index `i` when resampling `n_in`
/// samples to `n_out`, with pixel centers on integers.
#[inline]
fn resample_coord(i: usize, n_out: usize, n_in: usize) -> f64 {
    ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64)
}

/// Bilinear resampling to `height × width`.
pub fn resize_bilinear(img: &Image, height: usize, width: usize) -> Result<Image> {
    if height == 0 || width == 0 {
        return Err(Error::Dimension("resize target must be non-empty".into()));
    }
    let mut out = Image::filled(height, width, img.channels, 0.0);
    for r in 0..height {
        let v = resample_coord(r, height, img.height);
        for c in 0..width {
            let u = resample_coord(c, width, img.width);
            sample_into(img, PixelCoord::new(u, v), out.pixel_mut(r, c));
        }
    }
    Ok(out)
}

/// Nearest-neighbour resampling of any per-pixel grid.
pub fn resize_nearest<T: Copy>(
    data: &[T],
    dims: (usize, usize),
    height: usize,
    width: usize,
) -> Result<Vec<T>> {
    let (h, w) = dims;
    if data.len() != h * w || height == 0 || width == 0 {
        return Err(Error::Dimension(format!(
            "cannot resample {} values of a {h}x{w} grid to {height}x{width}",
            data.len()
        )));
    }
    let mut out = Vec::with_capacity(height * width);
    for r in 0..height {
        let y = resample_coord(r, height, h).round() as usize;
        for c in 0..width {
            let x = resample_coord(c, width, w).round() as usize;
            out.push(data[y * w + x]);
        }
    }
    Ok(out)
}

/// Bilinear resampling of a scalar field that only blends valid neighbours.
/// An output pixel is valid when its nearest input pixel is.
pub fn resize_masked(
    values: &[f64],
    valid: &ValidityMask,
    height: usize,
    width: usize,
) -> Result<(Vec<f64>, ValidityMask)> {
    let (h, w) = valid.dims();
    let nearest = resize_nearest(valid.data(), (h, w), height, width)?;
    if values.len() != h * w {
        return Err(Error::Dimension(format!(
            "{} values for a {h}x{w} mask",
            values.len()
        )));
    }
    let mut out = vec![0.0; height * width];
    for r in 0..height {
        let v = resample_coord(r, height, h);
        let y0 = (v.floor() as usize).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fy = v - y0 as f64;
        for c in 0..width {
            if !nearest[r * width + c] {
                continue;
            }
            let u = resample_coord(c, width, w);
            let x0 = (u.floor() as usize).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            let fx = u - x0 as f64;
            let taps = [
                (y0, x0, (1.0 - fy) * (1.0 - fx)),
                (y0, x1, (1.0 - fy) * fx),
                (y1, x0, fy * (1.0 - fx)),
                (y1, x1, fy * fx),
            ];
            let (mut acc, mut wsum) = (0.0, 0.0);
            for (y, x, wt) in taps {
                if valid.get(y, x) {
                    acc += wt * values[y * w + x];
                    wsum += wt;
                }
            }
            // The nearest tap is valid, so its weight is at least 1/4.
            out[r * width + c] = acc / wsum;
        }
    }
    Ok((out, ValidityMask::new(height, width, nearest)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Image {
        Image::from_fn(h, w, c, |_, _, _| rng.gen::<f64>())
    }

    #[test]
    fn rejects_bad_images() {
        assert!(Image::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(Image::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Image::new(1, 1, 1, vec![1.5]).is_err());
        assert!(Image::new(1, 1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn sample_at_pixel_centers_and_midpoints() {
        let img = Image::new(2, 2, 1, vec![0.2, 0.6, 0.1, 0.9]).unwrap();
        let (v, ok) = bilinear_sample(&img, PixelCoord::new(1.0, 1.0));
        assert!(ok);
        assert_eq!(v[0], 0.9);
        let (v, _) = bilinear_sample(&img, PixelCoord::new(0.5, 0.0));
        assert_relative_eq!(v[0], 0.4, epsilon = 1e-15);
        let (v, ok) = bilinear_sample(&img, PixelCoord::new(-0.5, 0.0));
        assert!(!ok);
        assert_eq!(v[0], 0.0);
        assert!(!bilinear_sample(&img, PixelCoord::new(0.0, 1.0001)).1);
    }

    #[test]
    fn sample_grad_examples() {
        let flat = Image::filled(5, 5, 3, 0.3);
        for g in bilinear_sample_grad(&flat, PixelCoord::new(2.3, 1.7)) {
            assert_eq!(g, (0.0, 0.0));
        }
        let w = 8;
        let ramp = Image::from_fn(6, w, 1, |_, c, _| c as f64 / w as f64);
        let g = bilinear_sample_grad(&ramp, PixelCoord::new(3.4, 2.6))[0];
        assert_relative_eq!(g.0, 1.0 / w as f64, epsilon = 1e-15);
        assert_eq!(g.1, 0.0);
        assert_eq!(
            bilinear_sample_grad(&ramp, PixelCoord::new(-1.0, 0.0))[0],
            (0.0, 0.0)
        );
    }

    #[test]
    fn sample_grad_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random_image(&mut rng, 8, 8, 3);
        let h = 1e-4;
        for _ in 0..50 {
            let p = PixelCoord::new(rng.gen_range(0.2..6.8), rng.gen_range(0.2..6.8));
            // Keep the probe away from cell edges where the sampler has kinks.
            if (p.u - p.u.round()).abs() < 2.0 * h || (p.v - p.v.round()).abs() < 2.0 * h {
                continue;
            }
            let g = bilinear_sample_grad(&img, p);
            for (ch, gc) in g.iter().enumerate() {
                let f = |q: PixelCoord| bilinear_sample(&img, q).0[ch];
                let du = (f(PixelCoord::new(p.u + h, p.v)) - f(PixelCoord::new(p.u - h, p.v)))
                    / (2.0 * h);
                let dv = (f(PixelCoord::new(p.u, p.v + h)) - f(PixelCoord::new(p.u, p.v - h)))
                    / (2.0 * h);
                assert_relative_eq!(gc.0, du, max_relative = 1e-6, epsilon = 1e-12);
                assert_relative_eq!(gc.1, dv, max_relative = 1e-6, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn photometric_examples() {
        let a = Image::filled(4, 4, 3, 0.0);
        let b = Image::filled(4, 4, 3, 1.0);
        let full = ValidityMask::full(4, 4, true);
        assert_eq!(photometric_loss(&a, &a, &full).unwrap(), 0.0);
        assert_eq!(photometric_loss(&a, &b, &full).unwrap(), 1.0);

        // Half the mask valid; valid pixels differ by 0.2, invalid ones by 0.9.
        let t = Image::filled(2, 4, 1, 0.5);
        let s = Image::from_fn(2, 4, 1, |r, _, _| if r == 0 { 0.7 } else { 0.0 });
        let half = ValidityMask::new(
            2,
            4,
            vec![true, true, true, true, false, false, false, false],
        )
        .unwrap();
        assert_relative_eq!(
            photometric_loss(&t, &s, &half).unwrap(),
            0.2,
            epsilon = 1e-15
        );

        let empty = ValidityMask::full(4, 4, false);
        assert!(matches!(
            photometric_loss(&a, &b, &empty),
            Err(Error::DegenerateLoss(_))
        ));
        assert!(photometric_loss(&a, &Image::filled(4, 3, 3, 0.0), &full).is_err());
    }

    #[test]
    fn ssim_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_image(&mut rng, 9, 7, 3);
        let full = ValidityMask::full(9, 7, true);
        assert_relative_eq!(ssim(&x, &x, &full).unwrap(), 1.0, epsilon = 1e-9);

        // Constant 0 vs constant 1: zero variances, so SSIM = C1 / (1 + C1).
        let zero = Image::filled(5, 5, 1, 0.0);
        let one = Image::filled(5, 5, 1, 1.0);
        let m = ValidityMask::full(5, 5, true);
        let s = ssim(&zero, &one, &m).unwrap();
        assert_relative_eq!(s, SSIM_C1 / (1.0 + SSIM_C1), epsilon = 1e-15);
        assert!(s > 0.0 && s < 0.01);

        let y = random_image(&mut rng, 9, 7, 3);
        assert_eq!(ssim(&x, &y, &full).unwrap(), ssim(&y, &x, &full).unwrap());

        assert!(matches!(
            ssim(&x, &y, &ValidityMask::full(9, 7, false)),
            Err(Error::DegenerateLoss(_))
        ));
    }

    #[test]
    fn ssim_loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_image(&mut rng, 6, 6, 1);
        let full = ValidityMask::full(6, 6, true);
        let (l, _) = ssim_loss_and_grad(&x, &x, &full, SsimForm::Negative).unwrap();
        assert_relative_eq!(l, -1.0, epsilon = 1e-9);
        let (l, _) = ssim_loss_and_grad(&x, &x, &full, SsimForm::HalfComplement).unwrap();
        assert_relative_eq!(l, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn ssim_grad_is_zero_outside_valid_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_image(&mut rng, 10, 10, 1);
        let y = random_image(&mut rng, 10, 10, 1);
        let mut mask = ValidityMask::full(10, 10, false);
        for r in 1..5 {
            for c in 1..5 {
                mask.set(r, c, true);
            }
        }
        let (_, g) = ssim_loss_and_grad(&x, &y, &mask, SsimForm::Negative).unwrap();
        for r in 0..10 {
            for c in 0..10 {
                if !mask.get(r, c) {
                    assert_eq!(g[r * 10 + c], 0.0);
                }
            }
        }
        assert!(g.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn ssim_grad_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random_image(&mut rng, 12, 12, 3);
        let y = random_image(&mut rng, 12, 12, 3);
        let full = ValidityMask::full(12, 12, true);
        let (_, g) = ssim_loss_and_grad(&x, &y, &full, SsimForm::Negative).unwrap();
        let h = 1e-4;
        for (i, gi) in g.iter().enumerate() {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp.data[i] += h;
            ym.data[i] -= h;
            let fd = (-ssim(&x, &yp, &full).unwrap() + ssim(&x, &ym, &full).unwrap()) / (2.0 * h);
            assert_relative_eq!(*gi, fd, max_relative = 1e-4, epsilon = 1e-10);
        }
    }

    #[test]
    fn resizing_to_the_same_shape_is_identity() {
        let img = Image::from_fn(5, 7, 3, |r, c, ch| (r * 7 + c + ch) as f64 / 40.0);
        assert_eq!(resize_bilinear(&img, 5, 7).unwrap(), img);
        let labels: Vec<u8> = (0..35).collect();
        assert_eq!(resize_nearest(&labels, (5, 7), 5, 7).unwrap(), labels);
    }

    #[test]
    fn downsampling_by_two_averages_pairs() {
        let img = Image::from_fn(2, 4, 1, |_, c, _| c as f64 / 4.0);
        let small = resize_bilinear(&img, 2, 2).unwrap();
        assert!((small.get(0, 0, 0) - 0.125).abs() < 1e-12);
        assert!((small.get(1, 1, 0) - 0.625).abs() < 1e-12);
    }

    #[test]
    fn masked_resize_ignores_invalid_taps() {
        let valid = ValidityMask::new(1, 4, vec![true, false, true, true]).unwrap();
        let (v, m) = resize_masked(&[1.0, 100.0, 3.0, 5.0], &valid, 1, 2).unwrap();
        // Output 0 sits halfway between inputs 0 and 1; ties round up to 1.
        assert_eq!(m.data(), &[false, true]);
        assert_eq!(v, vec![0.0, 4.0]);
    }
}
