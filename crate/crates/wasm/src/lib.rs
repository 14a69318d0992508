//! Browser bindings for the synthetic desk scene: render it, sweep the
//! scene scale, and refine a calibration while showing the depth error.

use primivox::calibrate::{apply_affine, refine, scene_scale_search, CalibConfig};
use primivox::synthworld::{make_bundle, SceneSpec, SyntheticFrame};
use wasm_bindgen::prelude::*;

fn js(e: primivox::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Summary of the last refinement.
#[wasm_bindgen]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineStats {
    pub gamma: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub median_rel_error: f64,
}

#[wasm_bindgen]
pub struct Desk {
    frame: SyntheticFrame,
    cfg: CalibConfig,
    scale: Option<u32>,
    stats: Option<RefineStats>,
}

impl Desk {
    pub fn build(width: usize, height: usize, lambda: f64, gamma: f64) -> primivox::Result<Desk> {
        let frame = make_bundle(&SceneSpec::desk(width, height, lambda, gamma))?;
        Ok(Desk {
            frame,
            cfg: CalibConfig::default(),
            scale: None,
            stats: None,
        })
    }

    pub fn sweep(&mut self) -> primivox::Result<Vec<f64>> {
        let s = scene_scale_search(&self.frame.bundle, &self.cfg)?;
        self.scale = Some(s.scale);
        Ok(s.losses)
    }

    /// Relative depth error per pixel after refinement; NaN off the
    /// ground-truth or calibrated support.
    pub fn refine_errors(
        &mut self,
        iterations: usize,
        learning_rate: f64,
    ) -> primivox::Result<Vec<f64>> {
        if self.scale.is_none() {
            self.sweep()?;
        }
        let cfg = CalibConfig {
            iterations,
            learning_rate,
            ..self.cfg.clone()
        };
        let r = refine(&self.frame.bundle, self.scale.unwrap_or(1) as f64, &cfg)?;
        let (depth, valid) = apply_affine(&self.frame.bundle.rel_depth, &r.state, cfg.min_depth)?;
        let gt = self.frame.gt_depth.values();
        let gt_valid = self.frame.gt_valid.data();
        let errors: Vec<f64> = depth
            .values()
            .iter()
            .zip(valid.data())
            .zip(gt.iter().zip(gt_valid))
            .map(|((&d, &v), (&g, &gv))| if v && gv { (d - g).abs() / g } else { f64::NAN })
            .collect();
        let mut finite: Vec<f64> = errors.iter().copied().filter(|e| e.is_finite()).collect();
        finite.sort_by(f64::total_cmp);
        self.stats = Some(RefineStats {
            gamma: r.state.gamma,
            initial_loss: r.trace.first().copied().unwrap_or(f64::NAN),
            final_loss: r.trace.last().copied().unwrap_or(f64::NAN),
            median_rel_error: finite.get(finite.len() / 2).copied().unwrap_or(f64::NAN),
        });
        Ok(errors)
    }
}

#[wasm_bindgen]
impl Desk {
    /// Renders the desk scene and corrupts its depth with `d = lambda·d_rel + gamma`.
    #[wasm_bindgen(constructor)]
    pub fn new(width: usize, height: usize, lambda: f64, gamma: f64) -> Result<Desk, JsError> {
        Desk::build(width, height, lambda, gamma).map_err(js)
    }

    pub fn width(&self) -> usize {
        self.frame.bundle.dims().1
    }

    pub fn height(&self) -> usize {
        self.frame.bundle.dims().0
    }

    /// First channel of the target image, row-major in [0, 1].
    pub fn image(&self) -> Vec<f32> {
        let img = &self.frame.bundle.target;
        let c = img.channels();
        img.data().iter().step_by(c).map(|&v| v as f32).collect()
    }

    /// Ground-truth metric depth; 0 for sky.
    pub fn depth(&self) -> Vec<f32> {
        self.frame
            .gt_depth
            .values()
            .iter()
            .map(|&v| v as f32)
            .collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.frame.semantics.labels().to_vec()
    }

    /// Photometric loss for every integer scale from 1 to 100.
    pub fn scale_curve(&mut self) -> Result<Vec<f64>, JsError> {
        self.sweep().map_err(js)
    }

    /// Chosen scale of the last sweep, 0 before any.
    pub fn scale(&self) -> u32 {
        self.scale.unwrap_or(0)
    }

    pub fn refine(&mut self, iterations: usize, learning_rate: f64) -> Result<Vec<f64>, JsError> {
        self.refine_errors(iterations, learning_rate).map_err(js)
    }

    pub fn stats(&self) -> Option<RefineStats> {
        self.stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_then_refine() {
        let mut d = Desk::build(48, 32, 12.0, 0.0).unwrap();
        assert_eq!(d.image().len(), 48 * 32);
        assert_eq!(d.labels().len(), 48 * 32);
        let curve = d.sweep().unwrap();
        assert_eq!(curve.len(), 100);
        assert_eq!(d.scale(), 12);

        let mut d = Desk::build(48, 32, 12.0, 0.5).unwrap();
        let errors = d.refine_errors(50, 0.01).unwrap();
        assert_eq!(errors.len(), 48 * 32);
        let s = d.stats().unwrap();
        assert!(s.final_loss < s.initial_loss);
        assert!(s.median_rel_error < 0.1);
    }
}
