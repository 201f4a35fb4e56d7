//! Pooling, branch softmax, pixel (un)shuffle, channel scaling and the
//! channel-axis 1-D convolution used by ECA.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Float, Shape, Tensor};

/// Spatial mean per `(batch, channel)`: output shape `(B, C, 1, 1)`.
pub fn global_avg_pool<T: Float>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let inv = T::one() / T::c(s.plane() as f64);
    let data = input
        .data()
        .chunks(s.plane())
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), data).expect("pooled shape")
}

/// Spreads a `(B, C, 1, 1)` gradient uniformly over an `(h, w)` plane.
pub fn global_avg_pool_backward<T: Float>(grad_out: &Tensor<T>, input_shape: Shape) -> Tensor<T> {
    let inv = T::one() / T::c(input_shape.plane() as f64);
    let mut out = Tensor::zeros(input_shape);
    for (plane, &g) in out
        .data_mut()
        .chunks_mut(input_shape.plane())
        .zip(grad_out.data())
    {
        plane.iter_mut().for_each(|v| *v = g * inv);
    }
    out
}

fn check_branches(s: Shape, n_branches: usize) -> Result<usize> {
    if n_branches == 0 || s.c % n_branches != 0 {
        return Err(Error::shape(format!(
            "{} channels cannot be split into {n_branches} branches",
            s.c
        )));
    }
    Ok(s.c / n_branches)
}

/// Softmax across `n_branches` channel blocks: channel `b * (C / n) + j` is
/// branch `b` of slot `j`. Output has the input's shape.
pub fn softmax_over_branches<T: Float>(logits: &Tensor<T>, n_branches: usize) -> Result<Tensor<T>> {
    let s = logits.shape();
    let slots = check_branches(s, n_branches)?;
    let p = s.plane();
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for j in 0..slots {
            for i in 0..p {
                let at = |b: usize| ((n * s.c + b * slots + j) * p) + i;
                let mut max = T::neg_infinity();
                for b in 0..n_branches {
                    max = max.max(logits.data()[at(b)]);
                }
                let mut total = T::zero();
                for b in 0..n_branches {
                    let e = (logits.data()[at(b)] - max).exp();
                    out.data_mut()[at(b)] = e;
                    total += e;
                }
                for b in 0..n_branches {
                    out.data_mut()[at(b)] = out.data()[at(b)] / total;
                }
            }
        }
    }
    Ok(out)
}

/// Backward of [`softmax_over_branches`] given its output `weights`.
pub fn softmax_over_branches_backward<T: Float>(
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    n_branches: usize,
) -> Result<Tensor<T>> {
    let s = weights.shape();
    weights.expect_same_shape(grad_out)?;
    let slots = check_branches(s, n_branches)?;
    let p = s.plane();
    let mut gin = Tensor::zeros(s);
    for n in 0..s.n {
        for j in 0..slots {
            for i in 0..p {
                let at = |b: usize| ((n * s.c + b * slots + j) * p) + i;
                let mut dot = T::zero();
                for b in 0..n_branches {
                    dot += weights.data()[at(b)] * grad_out.data()[at(b)];
                }
                for b in 0..n_branches {
                    let k = at(b);
                    gin.data_mut()[k] = weights.data()[k] * (grad_out.data()[k] - dot);
                }
            }
        }
    }
    Ok(gin)
}

/// `(B, C, H, W) -> (B, C r^2, H / r, W / r)`; sub-pixel `(dy, dx)` of input
/// channel `c` lands in output channel `c r^2 + dy r + dx`.
pub fn pixel_unshuffle<T: Float>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if r == 0 || s.h % r != 0 || s.w % r != 0 {
        return Err(Error::shape(format!(
            "spatial size {}x{} not divisible by unshuffle factor {r}",
            s.h, s.w
        )));
    }
    let (oh, ow) = (s.h / r, s.w / r);
    Ok(Tensor::from_fn(Shape::new(s.n, s.c * r * r, oh, ow), |n, oc, y, x| {
        let c = oc / (r * r);
        let dy = (oc % (r * r)) / r;
        let dx = oc % r;
        input.at(n, c, y * r + dy, x * r + dx)
    }))
}

/// Exact inverse of [`pixel_unshuffle`].
pub fn pixel_shuffle<T: Float>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if r == 0 || s.c % (r * r) != 0 {
        return Err(Error::shape(format!(
            "{} channels not divisible by shuffle factor {r}^2",
            s.c
        )));
    }
    Ok(Tensor::from_fn(
        Shape::new(s.n, s.c / (r * r), s.h * r, s.w * r),
        |n, c, y, x| input.at(n, c * r * r + (y % r) * r + (x % r), y / r, x / r),
    ))
}

/// `x[b, c, :, :] * scale[b, c]` with `scale` shaped `(B, C, 1, 1)`.
pub fn channel_scale<T: Float>(x: &Tensor<T>, scale: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if scale.shape() != Shape::new(s.n, s.c, 1, 1) {
        return Err(Error::shape(format!(
            "channel scale {} does not match {s}",
            scale.shape()
        )));
    }
    let mut out = x.clone();
    out.data_mut()
        .par_chunks_mut(s.plane())
        .zip(scale.data().par_iter())
        .for_each(|(p, &k)| p.iter_mut().for_each(|v| *v *= k));
    Ok(out)
}

/// Returns `(grad_x, grad_scale)` for [`channel_scale`].
pub fn channel_scale_backward<T: Float>(
    x: &Tensor<T>,
    scale: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let gx = channel_scale(grad_out, scale).expect("channel scale shape");
    let s = x.shape();
    let gs: Vec<T> = x
        .data()
        .chunks(s.plane())
        .zip(grad_out.data().chunks(s.plane()))
        .map(|(a, b)| a.iter().zip(b).map(|(&u, &v)| u * v).sum())
        .collect();
    (gx, Tensor::from_vec(scale.shape(), gs).expect("scale shape"))
}

/// 1-D convolution along the channel axis of a `(B, C, 1, 1)` tensor with a
/// single odd-length kernel and zero padding (the ECA attention conv).
pub fn channel_conv1d<T: Float>(x: &Tensor<T>, kernel: &[T]) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.h != 1 || s.w != 1 || kernel.len() % 2 == 0 {
        return Err(Error::shape(format!(
            "channel conv expects (B, C, 1, 1) input and odd kernel, got {s} / {}",
            kernel.len()
        )));
    }
    let pad = (kernel.len() / 2) as isize;
    Ok(Tensor::from_fn(s, |n, c, _, _| {
        let mut acc = T::zero();
        for (t, &w) in kernel.iter().enumerate() {
            let src = c as isize + t as isize - pad;
            if src >= 0 && (src as usize) < s.c {
                acc += w * x.at(n, src as usize, 0, 0);
            }
        }
        acc
    }))
}

/// Returns `(grad_x, grad_kernel)` for [`channel_conv1d`].
pub fn channel_conv1d_backward<T: Float>(
    x: &Tensor<T>,
    kernel: &[T],
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Vec<T>) {
    let s = x.shape();
    let pad = (kernel.len() / 2) as isize;
    let mut gx = Tensor::zeros(s);
    let mut gk = vec![T::zero(); kernel.len()];
    for n in 0..s.n {
        for c in 0..s.c {
            let g = grad_out.at(n, c, 0, 0);
            for (t, &w) in kernel.iter().enumerate() {
                let src = c as isize + t as isize - pad;
                if src >= 0 && (src as usize) < s.c {
                    let i = gx.index(n, src as usize, 0, 0);
                    gx.data_mut()[i] += w * g;
                    gk[t] += g * x.at(n, src as usize, 0, 0);
                }
            }
        }
    }
    (gx, gk)
}
