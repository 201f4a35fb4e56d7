//! Full-reference quality metrics for `[0, 1]` images.

use crate::error::Result;
use crate::tensor::{Float, Tensor};

pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

pub fn mse<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.expect_same_shape(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(sum / a.numel() as f64)
}

/// `10 log10(1 / MSE)` in dB, capped at [`PSNR_CAP`].
pub fn psnr<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

/// Mean per-image PSNR over the batch axis.
pub fn batch_psnr<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.expect_same_shape(b)?;
    let n = a.shape().n;
    let mut total = 0.0;
    for i in 0..n {
        total += psnr(&a.select_batch(&[i]), &b.select_batch(&[i]))?;
    }
    Ok(total / n as f64)
}

fn gaussian_window(len: usize) -> Vec<f64> {
    let half = (len / 2) as f64;
    let w: Vec<f64> = (0..len)
        .map(|i| {
            let x = i as f64 - half;
            (-(x * x) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `(h, w)` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, win: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = win.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|t| win[t] * plane[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|t| win[t] * rows[(y + t) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let mut len = SSIM_WINDOW.min(h).min(w);
    if len % 2 == 0 {
        len -= 1;
    }
    let win = gaussian_window(len.max(1));
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let (mu_a, oh, ow) = filter_valid(a, h, w, &win);
    let (mu_b, _, _) = filter_valid(b, h, w, &win);
    let (aa, _, _) = filter_valid(&prod(|x, _| x * x), h, w, &win);
    let (bb, _, _) = filter_valid(&prod(|_, y| y * y), h, w, &win);
    let (ab, _, _) = filter_valid(&prod(|x, y| x * y), h, w, &win);
    let mut total = 0.0;
    for i in 0..oh * ow {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / (oh * ow) as f64
}

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5, shrunk for small
/// images), computed per channel and averaged over channels and samples.
pub fn ssim<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.expect_same_shape(b)?;
    let s = a.shape();
    let mut total = 0.0;
    for n in 0..s.n {
        for c in 0..s.c {
            let pa: Vec<f64> = a.plane(n, c).iter().map(|v| v.as_f64()).collect();
            let pb: Vec<f64> = b.plane(n, c).iter().map(|v| v.as_f64()).collect();
            total += ssim_plane(&pa, &pb, s.h, s.w);
        }
    }
    Ok(total / (s.n * s.c) as f64)
}
