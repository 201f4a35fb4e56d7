//! Procedural clean/hazy image pairs.
//!
//! Every image draws from its own ChaCha stream keyed by `(seed, index)`, so
//! generation is parallel yet independent of the worker count.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::haze::image_io::{read_image, write_image};
use crate::haze::sim::{synthesize_haze, HazeParams, DEPTH_MAX};
use crate::tensor::{Float, Shape, Tensor};

pub const BETA_RANGE: (f64, f64) = (0.5, 2.0);
pub const AIRLIGHT_RANGE: (f64, f64) = (0.7, 1.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthKind {
    Ramp,
    Radial,
    PerlinLike,
    /// Cycles through the three kinds by image index.
    Mixed,
}

impl FromStr for DepthKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ramp" => Ok(Self::Ramp),
            "radial" => Ok(Self::Radial),
            "perlin" | "perlin-like" | "perlin_like" => Ok(Self::PerlinLike),
            "mixed" => Ok(Self::Mixed),
            _ => Err(Error::config(format!(
                "unknown depth kind `{s}` (expected ramp, radial, perlin-like or mixed)"
            ))),
        }
    }
}

impl fmt::Display for DepthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ramp => "ramp",
            Self::Radial => "radial",
            Self::PerlinLike => "perlin-like",
            Self::Mixed => "mixed",
        })
    }
}

#[derive(Clone, Debug)]
pub struct ImagePair<T> {
    /// `(1, 3, H, W)` in `[0, 1]`.
    pub clean: Tensor<T>,
    pub hazy: Tensor<T>,
    /// Known for generated pairs; pairs loaded from disk carry none because
    /// depth maps are not persisted.
    pub params: Option<HazeParams>,
}

fn image_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn normalize_depth(raw: Vec<f64>) -> Vec<f64> {
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; raw.len()];
    }
    raw.into_iter().map(|d| (d - lo) / span * DEPTH_MAX).collect()
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Sum of three octaves of smoothly interpolated lattice noise.
fn value_noise(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for (cells, amp) in [(2usize, 1.0), (4, 0.5), (8, 0.25)] {
        let lattice: Vec<f64> = (0..(cells + 1) * (cells + 1)).map(|_| rng.random::<f64>()).collect();
        let at = |i: usize, j: usize| lattice[i * (cells + 1) + j];
        for y in 0..h {
            let fy = y as f64 / h as f64 * cells as f64;
            let (iy, ty) = (fy as usize, smoothstep(fy.fract()));
            for x in 0..w {
                let fx = x as f64 / w as f64 * cells as f64;
                let (ix, tx) = (fx as usize, smoothstep(fx.fract()));
                let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
                let bottom = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
                out[y * w + x] += amp * (top * (1.0 - ty) + bottom * ty);
            }
        }
    }
    out
}

/// Depth map normalized to `[0, DEPTH_MAX]`.
pub fn depth_map(kind: DepthKind, rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
    let raw = match kind {
        DepthKind::Ramp => {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let (dx, dy) = (angle.cos(), angle.sin());
            (0..h * w)
                .map(|i| ((i % w) as f64 / w as f64) * dx + ((i / w) as f64 / h as f64) * dy)
                .collect()
        }
        DepthKind::Radial => {
            let cx = rng.random_range(0.0..1.0);
            let cy = rng.random_range(0.0..1.0);
            (0..h * w)
                .map(|i| {
                    let x = (i % w) as f64 / w as f64 - cx;
                    let y = (i / w) as f64 / h as f64 - cy;
                    (x * x + y * y).sqrt()
                })
                .collect()
        }
        DepthKind::PerlinLike => value_noise(rng, h, w),
        DepthKind::Mixed => unreachable!("resolved per image"),
    };
    normalize_depth(raw)
}

/// Two-color gradient background with random rectangles and circles.
fn clean_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<[f64; 3]> {
    let color = |rng: &mut ChaCha8Rng| -> [f64; 3] { std::array::from_fn(|_| rng.random::<f64>()) };
    let c0 = color(rng);
    let c1 = color(rng);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let mut px: Vec<[f64; 3]> = (0..h * w)
        .map(|i| {
            let x = (i % w) as f64 / w as f64 - 0.5;
            let y = (i / w) as f64 / h as f64 - 0.5;
            let t = (x * dx + y * dy + 0.5).clamp(0.0, 1.0);
            std::array::from_fn(|c| c0[c] * (1.0 - t) + c1[c] * t)
        })
        .collect();
    let shapes = rng.random_range(3..=8);
    for _ in 0..shapes {
        let col = color(rng);
        let cx = rng.random_range(0.0..1.0);
        let cy = rng.random_range(0.0..1.0);
        let rx = rng.random_range(0.05..0.3);
        let ry = rng.random_range(0.05..0.3);
        let circle = rng.random_bool(0.5);
        for (i, p) in px.iter_mut().enumerate() {
            let x = ((i % w) as f64 + 0.5) / w as f64 - cx;
            let y = ((i / w) as f64 + 0.5) / h as f64 - cy;
            let inside = if circle {
                x * x + y * y <= rx * rx
            } else {
                x.abs() <= rx && y.abs() <= ry
            };
            if inside {
                *p = col;
            }
        }
    }
    px
}

/// Generates pair `index` of the dataset keyed by `seed`.
pub fn generate_pair<T: Float>(index: usize, size: usize, seed: u64, kind: DepthKind) -> Result<ImagePair<T>> {
    let mut rng = image_rng(seed, index);
    let kind = match kind {
        DepthKind::Mixed => [DepthKind::Ramp, DepthKind::Radial, DepthKind::PerlinLike][index % 3],
        k => k,
    };
    let px = clean_image(&mut rng, size, size);
    let depth = depth_map(kind, &mut rng, size, size);
    let beta = rng.random_range(BETA_RANGE.0..=BETA_RANGE.1);
    let a = rng.random_range(AIRLIGHT_RANGE.0..=AIRLIGHT_RANGE.1);
    let params = HazeParams {
        atmosphere: [a; 3],
        beta,
        depth,
        height: size,
        width: size,
    };
    let clean = Tensor::from_fn(Shape::new(1, 3, size, size), |_, c, y, x| T::c(px[y * size + x][c]));
    let hazy = synthesize_haze(&clean, &params)?;
    Ok(ImagePair {
        clean,
        hazy,
        params: Some(params),
    })
}

/// `n` square pairs of side `size`; deterministic in `seed`.
pub fn generate_dataset<T: Float>(n: usize, size: usize, seed: u64, kind: DepthKind) -> Result<Vec<ImagePair<T>>> {
    if size == 0 {
        return Err(Error::config("image size must be positive"));
    }
    (0..n)
        .into_par_iter()
        .map(|i| generate_pair(i, size, seed, kind))
        .collect()
}

/// Writes `clean/NNNN.png`, `hazy/NNNN.png` and `params.csv` under `dir`.
pub fn save_dataset<T: Float>(pairs: &[ImagePair<T>], dir: &Path) -> Result<()> {
    for sub in ["clean", "hazy"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    pairs.par_iter().enumerate().try_for_each(|(i, p)| -> Result<()> {
        write_image(&p.clean, &dir.join("clean").join(format!("{i:04}.png")))?;
        write_image(&p.hazy, &dir.join("hazy").join(format!("{i:04}.png")))
    })?;
    let mut csv = Vec::new();
    writeln!(csv, "index,beta,A_r,A_g,A_b").unwrap();
    for (i, p) in pairs.iter().enumerate() {
        match &p.params {
            Some(h) => writeln!(
                csv,
                "{i},{},{},{},{}",
                h.beta, h.atmosphere[0], h.atmosphere[1], h.atmosphere[2]
            ),
            None => writeln!(csv, "{i},,,,"),
        }
        .unwrap();
    }
    let path = dir.join("params.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))
}

/// Loads every `clean/*.png` that has a matching `hazy/*.png`, sorted by name.
pub fn load_dataset<T: Float>(dir: &Path) -> Result<Vec<ImagePair<T>>> {
    let clean_dir = dir.join("clean");
    let mut names: Vec<_> = fs::read_dir(&clean_dir)
        .map_err(|e| Error::io(&clean_dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name())
        .filter(|n| dir.join("hazy").join(n).is_file())
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Format {
            path: dir.to_path_buf(),
            reason: "no clean/hazy image pairs found".into(),
        });
    }
    names
        .par_iter()
        .map(|n| {
            let clean = read_image(&clean_dir.join(n))?;
            let hazy: Tensor<T> = read_image(&dir.join("hazy").join(n))?;
            clean.expect_same_shape(&hazy)?;
            Ok(ImagePair {
                clean,
                hazy,
                params: None,
            })
        })
        .collect()
}
