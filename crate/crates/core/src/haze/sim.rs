//! Atmospheric scattering model `I = J t + A (1 - t)`, `t = exp(-beta d)`.

use crate::error::{Error, Result};
use crate::tensor::{Float, Shape, Tensor};

pub const DEFAULT_T_FLOOR: f64 = 0.05;
/// Depth maps are rescaled to `[0, DEPTH_MAX]` before use.
pub const DEPTH_MAX: f64 = 3.0;

#[derive(Clone, Debug, PartialEq)]
pub struct HazeParams {
    /// Global atmospheric light per RGB channel.
    pub atmosphere: [f64; 3],
    /// Scattering coefficient, `>= 0`.
    pub beta: f64,
    /// Per-pixel scene depth, row-major `(h, w)`, entries `>= 0`.
    pub depth: Vec<f64>,
    pub height: usize,
    pub width: usize,
}

impl HazeParams {
    pub fn uniform(atmosphere: [f64; 3], beta: f64, depth: f64, height: usize, width: usize) -> Self {
        Self {
            atmosphere,
            beta,
            depth: vec![depth; height * width],
            height,
            width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth.len() != self.height * self.width {
            return Err(Error::shape(format!(
                "depth map has {} entries for a {}x{} image",
                self.depth.len(),
                self.height,
                self.width
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config(format!("beta {} must be finite and >= 0", self.beta)));
        }
        if self.atmosphere.iter().any(|a| !a.is_finite()) {
            return Err(Error::config("atmospheric light must be finite"));
        }
        if self.depth.iter().any(|&d| !(d >= 0.0)) {
            return Err(Error::config("depth must be >= 0"));
        }
        Ok(())
    }

    /// `t(x) = exp(-beta d(x))`, in `(0, 1]`.
    pub fn transmission(&self) -> Vec<f64> {
        self.depth.iter().map(|&d| (-self.beta * d).exp()).collect()
    }

    fn check_image(&self, s: Shape) -> Result<()> {
        self.validate()?;
        if s.n != 1 || s.c != 3 || s.h != self.height || s.w != self.width {
            return Err(Error::shape(format!(
                "expected a (1, 3, {}, {}) image, got {s}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Applies the scattering model per pixel and channel, clamped to `[0, 1]`.
pub fn synthesize_haze<T: Float>(clean: &Tensor<T>, params: &HazeParams) -> Result<Tensor<T>> {
    let s = clean.shape();
    params.check_image(s)?;
    let t = params.transmission();
    Ok(Tensor::from_fn(s, |_, c, y, x| {
        let tv = t[y * s.w + x];
        let a = params.atmosphere[c];
        let j = clean.at(0, c, y, x).as_f64();
        T::c((j * tv + a * (1.0 - tv)).clamp(0.0, 1.0))
    }))
}

/// `J = (I - A (1 - t)) / max(t, t_floor)`, clamped to `[0, 1]`.
pub fn invert_haze<T: Float>(hazy: &Tensor<T>, params: &HazeParams, t_floor: f64) -> Result<Tensor<T>> {
    if !(t_floor > 0.0) {
        return Err(Error::config(format!("t_floor {t_floor} must be > 0")));
    }
    let s = hazy.shape();
    params.check_image(s)?;
    let t = params.transmission();
    Ok(Tensor::from_fn(s, |_, c, y, x| {
        let tv = t[y * s.w + x];
        let a = params.atmosphere[c];
        let i = hazy.at(0, c, y, x).as_f64();
        T::c(((i - a * (1.0 - tv)) / tv.max(t_floor)).clamp(0.0, 1.0))
    }))
}
