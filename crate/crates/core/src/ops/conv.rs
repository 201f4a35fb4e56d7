//! Grouped 2-D convolution (covers pointwise, depthwise and dense kernels)
//! with reflect or zero "same" padding.
//!
//! Every output element is accumulated in a fixed order (bias, then input
//! channel, kernel row, kernel column), and parallel work is split only over
//! independent output planes, so results do not depend on the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{reflect_index, Float, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Zero,
    #[default]
    Reflect,
}

/// Geometry of a convolution. Padding amount is always `(kernel - 1) / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub groups: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn pointwise(in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel: 1,
            stride: 1,
            groups: 1,
            padding: Padding::Reflect,
        }
    }

    pub fn depthwise(ch: usize, kernel: usize, padding: Padding) -> Self {
        Self {
            in_ch: ch,
            out_ch: ch,
            kernel,
            stride: 1,
            groups: ch,
            padding,
        }
    }

    pub fn dense(in_ch: usize, out_ch: usize, kernel: usize, padding: Padding) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel,
            stride: 1,
            groups: 1,
            padding,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_ch == 0 || self.out_ch == 0 || self.groups == 0 || self.stride == 0 {
            return Err(Error::config(format!("degenerate convolution {self:?}")));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::config(format!(
                "kernel size {} is not odd",
                self.kernel
            )));
        }
        if self.in_ch % self.groups != 0 || self.out_ch % self.groups != 0 {
            return Err(Error::config(format!(
                "channels {}->{} not divisible by {} groups",
                self.in_ch, self.out_ch, self.groups
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn in_per_group(&self) -> usize {
        self.in_ch / self.groups
    }

    #[inline]
    pub fn out_per_group(&self) -> usize {
        self.out_ch / self.groups
    }

    #[inline]
    pub fn pad(&self) -> usize {
        (self.kernel - 1) / 2
    }

    pub fn weight_len(&self) -> usize {
        self.out_ch * self.in_per_group() * self.kernel * self.kernel
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(self.out_ch, self.in_per_group(), self.kernel, self.kernel)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.stride), w.div_ceil(self.stride))
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_ch && self.out_ch == self.in_ch
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.groups == 1
    }

    /// Multiply-accumulates for one `(h, w)` input image (batch 1, bias free).
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let (oh, ow) = self.output_hw(h, w);
        (oh * ow * self.out_ch) as u64 * (self.in_per_group() * self.kernel * self.kernel) as u64
    }

    fn check_input(&self, input: Shape) -> Result<()> {
        self.validate()?;
        if input.c != self.in_ch {
            return Err(Error::config(format!(
                "convolution expects {} input channels, got {input}",
                self.in_ch
            )));
        }
        if input.h == 0 || input.w == 0 {
            return Err(Error::shape(format!("empty spatial input {input}")));
        }
        Ok(())
    }
}

/// A self-contained convolution layer: geometry plus its own weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub spec: ConvSpec,
    /// `(out_ch, in_ch / groups, k, k)`.
    pub weight: Tensor<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Float> ConvParams<T> {
    pub fn new(spec: ConvSpec, weight: Tensor<T>, bias: Option<Vec<T>>) -> Result<Self> {
        spec.validate()?;
        if weight.shape() != spec.weight_shape() {
            return Err(Error::config(format!(
                "weight shape {} does not match {}",
                weight.shape(),
                spec.weight_shape()
            )));
        }
        if let Some(b) = &bias {
            if b.len() != spec.out_ch {
                return Err(Error::config(format!(
                    "bias length {} != out channels {}",
                    b.len(),
                    spec.out_ch
                )));
            }
        }
        Ok(Self { spec, weight, bias })
    }

    pub fn zeros(spec: ConvSpec, with_bias: bool) -> Result<Self> {
        Self::new(
            spec,
            Tensor::zeros(spec.weight_shape()),
            with_bias.then(|| vec![T::zero(); spec.out_ch]),
        )
    }
}

pub fn conv2d<T: Float>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    conv2d_raw(input, params.weight.data(), params.bias.as_deref(), &params.spec)
}

/// `out += w * src`, elementwise.
#[inline]
fn axpy<T: Float>(out: &mut [T], src: &[T], w: T) {
    for (o, &v) in out.iter_mut().zip(src) {
        *o += w * v;
    }
}

/// Dot product with four interleaved partial sums (a fixed, vectorizable
/// reduction order).
#[inline]
fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Source coordinate of padded coordinate `p`, or `None` for a zero pad.
#[inline]
fn padded_src(p: usize, pad: usize, len: usize, padding: Padding) -> Option<usize> {
    let i = p as isize - pad as isize;
    if i >= 0 && (i as usize) < len {
        Some(i as usize)
    } else {
        match padding {
            Padding::Zero => None,
            Padding::Reflect => Some(reflect_index(i, len)),
        }
    }
}

/// Every `(h, w)` plane of `input` padded by `pad` on each side.
fn pad_planes<T: Float>(input: &Tensor<T>, pad: usize, padding: Padding) -> Vec<T> {
    let s = input.shape();
    let (hp, wp) = (s.h + 2 * pad, s.w + 2 * pad);
    let rows: Vec<Option<usize>> = (0..hp).map(|p| padded_src(p, pad, s.h, padding)).collect();
    let cols: Vec<Option<usize>> = (0..wp).map(|p| padded_src(p, pad, s.w, padding)).collect();
    let mut out = vec![T::zero(); s.n * s.c * hp * wp];
    out.par_chunks_mut(hp * wp).enumerate().for_each(|(idx, dst)| {
        let src = input.plane(idx / s.c, idx % s.c);
        for (py, sy) in rows.iter().enumerate() {
            let Some(sy) = *sy else { continue };
            let srow = &src[sy * s.w..(sy + 1) * s.w];
            let drow = &mut dst[py * wp..(py + 1) * wp];
            drow[pad..pad + s.w].copy_from_slice(srow);
            for (px, sx) in cols.iter().enumerate() {
                if px < pad || px >= pad + s.w {
                    if let Some(sx) = *sx {
                        drow[px] = srow[sx];
                    }
                }
            }
        }
    });
    out
}

/// Adds a padded-plane gradient back onto the `(h, w)` plane it came from.
fn fold_padded_grad<T: Float>(gpad: &[T], plane: &mut [T], h: usize, w: usize, pad: usize, padding: Padding) {
    let wp = w + 2 * pad;
    for py in 0..h + 2 * pad {
        let Some(sy) = padded_src(py, pad, h, padding) else { continue };
        let grow = &gpad[py * wp..(py + 1) * wp];
        let prow = &mut plane[sy * w..(sy + 1) * w];
        for (px, &g) in grow.iter().enumerate() {
            if let Some(sx) = padded_src(px, pad, w, padding) {
                prow[sx] += g;
            }
        }
    }
}

/// Source index for output position `o` under kernel tap `k`.
#[inline]
fn src_index(o: usize, k: usize, spec: &ConvSpec, len: usize) -> Option<usize> {
    let i = (o * spec.stride + k) as isize - spec.pad() as isize;
    if i >= 0 && (i as usize) < len {
        Some(i as usize)
    } else {
        match spec.padding {
            Padding::Zero => None,
            Padding::Reflect => Some(reflect_index(i, len)),
        }
    }
}

/// `[lo, hi)` of output columns whose source column is in range without
/// padding, for stride 1.
#[inline]
fn interior(off: isize, out_len: usize, in_len: usize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = ((in_len as isize - off).max(0) as usize).min(out_len);
    (lo.min(hi), hi)
}

/// `out[o] += w * inp[src(o)]` along one row.
#[inline]
fn axpy_row<T: Float>(out: &mut [T], inp: &[T], w: T, kx: usize, spec: &ConvSpec) {
    if spec.stride == 1 {
        let off = kx as isize - spec.pad() as isize;
        let (lo, hi) = interior(off, out.len(), inp.len());
        for o in (0..lo).chain(hi..out.len()) {
            if let Some(i) = src_index(o, kx, spec, inp.len()) {
                out[o] += w * inp[i];
            }
        }
        if lo < hi {
            let src = &inp[(lo as isize + off) as usize..(hi as isize + off) as usize];
            for (o, &v) in out[lo..hi].iter_mut().zip(src) {
                *o += w * v;
            }
        }
    } else {
        for (o, out_v) in out.iter_mut().enumerate() {
            if let Some(i) = src_index(o, kx, spec, inp.len()) {
                *out_v += w * inp[i];
            }
        }
    }
}

/// `inp_grad[src(o)] += w * g[o]` along one row.
#[inline]
fn scatter_row<T: Float>(inp_grad: &mut [T], g: &[T], w: T, kx: usize, spec: &ConvSpec) {
    let len = inp_grad.len();
    // Border contributions are applied in ascending `o` order just like the
    // interior, so the per-element accumulation order is the natural one.
    for (o, &gv) in g.iter().enumerate() {
        if let Some(i) = src_index(o, kx, spec, len) {
            inp_grad[i] += w * gv;
        }
    }
}

/// `sum_o g[o] * inp[src(o)]` along one row.
#[inline]
fn dot_row<T: Float>(g: &[T], inp: &[T], kx: usize, spec: &ConvSpec) -> T {
    let mut acc = T::zero();
    for (o, &gv) in g.iter().enumerate() {
        if let Some(i) = src_index(o, kx, spec, inp.len()) {
            acc += gv * inp[i];
        }
    }
    acc
}

/// Convolution over raw weight/bias slices (the layout of [`ConvParams`]).
pub fn conv2d_raw<T: Float>(
    input: &Tensor<T>,
    weight: &[T],
    bias: Option<&[T]>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let s = input.shape();
    spec.check_input(s)?;
    if weight.len() != spec.weight_len() {
        return Err(Error::config(format!(
            "weight has {} elements, expected {}",
            weight.len(),
            spec.weight_len()
        )));
    }
    let (oh, ow) = spec.output_hw(s.h, s.w);
    let out_shape = Shape::new(s.n, spec.out_ch, oh, ow);
    let mut out = Tensor::zeros(out_shape);
    let k = spec.kernel;
    let cin = spec.in_per_group();
    let opg = spec.out_per_group();
    let in_plane = s.plane();
    let out_plane = oh * ow;

    let pad = spec.pad();
    let (hp, wp) = (s.h + 2 * pad, s.w + 2 * pad);
    let padded = (spec.stride == 1 && k > 1).then(|| pad_planes(input, pad, spec.padding));

    out.data_mut()
        .par_chunks_mut(out_plane)
        .enumerate()
        .for_each(|(idx, plane)| {
            let (n, co) = (idx / spec.out_ch, idx % spec.out_ch);
            if let Some(b) = bias {
                plane.iter_mut().for_each(|v| *v = b[co]);
            }
            let g = co / opg;
            let sample = input.sample(n);
            for ci in 0..cin {
                let src = &sample[(g * cin + ci) * in_plane..(g * cin + ci + 1) * in_plane];
                let wbase = (co * cin + ci) * k * k;
                if k == 1 && spec.stride == 1 {
                    axpy(plane, src, weight[wbase]);
                    continue;
                }
                if let Some(xp) = &padded {
                    let c = n * s.c + g * cin + ci;
                    let src = &xp[c * hp * wp..(c + 1) * hp * wp];
                    for ky in 0..k {
                        for oy in 0..oh {
                            let in_row = &src[(oy + ky) * wp..(oy + ky + 1) * wp];
                            let out_row = &mut plane[oy * ow..(oy + 1) * ow];
                            for kx in 0..k {
                                axpy(out_row, &in_row[kx..kx + ow], weight[wbase + ky * k + kx]);
                            }
                        }
                    }
                    continue;
                }
                for ky in 0..k {
                    for oy in 0..oh {
                        let Some(iy) = src_index(oy, ky, spec, s.h) else {
                            continue;
                        };
                        let in_row = &src[iy * s.w..(iy + 1) * s.w];
                        let out_row = &mut plane[oy * ow..(oy + 1) * ow];
                        for kx in 0..k {
                            axpy_row(out_row, in_row, weight[wbase + ky * k + kx], kx, spec);
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Gradients produced by [`conv2d_backward`].
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Backward pass of [`conv2d_raw`]. The input gradient is skipped when
/// `need_input` is false (e.g. for the first layer of a network).
pub fn conv2d_backward<T: Float>(
    input: &Tensor<T>,
    weight: &[T],
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let s = input.shape();
    spec.check_input(s)?;
    let (oh, ow) = spec.output_hw(s.h, s.w);
    let gs = grad_out.shape();
    if gs != Shape::new(s.n, spec.out_ch, oh, ow) {
        return Err(Error::shape(format!(
            "gradient shape {gs} does not match convolution output"
        )));
    }
    let k = spec.kernel;
    let cin = spec.in_per_group();
    let opg = spec.out_per_group();
    let in_plane = s.plane();
    let kk = k * k;

    let bias: Vec<T> = (0..spec.out_ch)
        .into_par_iter()
        .map(|co| {
            let mut acc = T::zero();
            for n in 0..s.n {
                for &v in grad_out.plane(n, co) {
                    acc += v;
                }
            }
            acc
        })
        .collect();

    let pad = spec.pad();
    let (hp, wp) = (s.h + 2 * pad, s.w + 2 * pad);
    let padded = (spec.stride == 1 && k > 1).then(|| pad_planes(input, pad, spec.padding));

    let mut wgrad = vec![T::zero(); spec.weight_len()];
    wgrad
        .par_chunks_mut(cin * kk)
        .enumerate()
        .for_each(|(co, wg)| {
            let g = co / opg;
            for n in 0..s.n {
                let gplane = grad_out.plane(n, co);
                let sample = input.sample(n);
                for ci in 0..cin {
                    let src = &sample[(g * cin + ci) * in_plane..(g * cin + ci + 1) * in_plane];
                    if k == 1 && spec.stride == 1 {
                        wg[ci] += dot(gplane, src);
                        continue;
                    }
                    if let Some(xp) = &padded {
                        let c = n * s.c + g * cin + ci;
                        let src = &xp[c * hp * wp..(c + 1) * hp * wp];
                        for ky in 0..k {
                            for kx in 0..k {
                                let mut acc = T::zero();
                                for oy in 0..oh {
                                    let in_row = &src[(oy + ky) * wp..(oy + ky + 1) * wp];
                                    acc += dot(&gplane[oy * ow..(oy + 1) * ow], &in_row[kx..kx + ow]);
                                }
                                wg[ci * kk + ky * k + kx] += acc;
                            }
                        }
                        continue;
                    }
                    for ky in 0..k {
                        for kx in 0..k {
                            let mut acc = T::zero();
                            for oy in 0..oh {
                                let Some(iy) = src_index(oy, ky, spec, s.h) else {
                                    continue;
                                };
                                acc += dot_row(
                                    &gplane[oy * ow..(oy + 1) * ow],
                                    &src[iy * s.w..(iy + 1) * s.w],
                                    kx,
                                    spec,
                                );
                            }
                            wg[ci * kk + ky * k + kx] += acc;
                        }
                    }
                }
            }
        });

    let input_grad = if need_input {
        let mut gin = Tensor::zeros(s);
        gin.data_mut()
            .par_chunks_mut(in_plane)
            .enumerate()
            .for_each(|(idx, plane)| {
                let (n, c) = (idx / s.c, idx % s.c);
                let g = c / cin;
                let ci = c % cin;
                if padded.is_some() {
                    let mut gpad = vec![T::zero(); hp * wp];
                    for co in g * opg..(g + 1) * opg {
                        let gplane = grad_out.plane(n, co);
                        let wbase = (co * cin + ci) * kk;
                        for ky in 0..k {
                            for oy in 0..oh {
                                let g_row = &gplane[oy * ow..(oy + 1) * ow];
                                let prow = &mut gpad[(oy + ky) * wp..(oy + ky + 1) * wp];
                                for kx in 0..k {
                                    axpy(&mut prow[kx..kx + ow], g_row, weight[wbase + ky * k + kx]);
                                }
                            }
                        }
                    }
                    fold_padded_grad(&gpad, plane, s.h, s.w, pad, spec.padding);
                    return;
                }
                for co in g * opg..(g + 1) * opg {
                    let gplane = grad_out.plane(n, co);
                    let wbase = (co * cin + ci) * kk;
                    if k == 1 && spec.stride == 1 {
                        axpy(plane, gplane, weight[wbase]);
                        continue;
                    }
                    for ky in 0..k {
                        for oy in 0..oh {
                            let Some(iy) = src_index(oy, ky, spec, s.h) else {
                                continue;
                            };
                            let g_row = &gplane[oy * ow..(oy + 1) * ow];
                            let in_row = &mut plane[iy * s.w..(iy + 1) * s.w];
                            for kx in 0..k {
                                scatter_row(in_row, g_row, weight[wbase + ky * k + kx], kx, spec);
                            }
                        }
                    }
                }
            });
        Some(gin)
    } else {
        None
    };

    Ok(ConvGrads {
        input: input_grad,
        weight: wgrad,
        bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_conv(input: &Tensor<f64>, p: &ConvParams<f64>) -> Tensor<f64> {
        // Naive oracle: one explicit sum per output element.
        let s = input.shape();
        let spec = p.spec;
        let (oh, ow) = spec.output_hw(s.h, s.w);
        let k = spec.kernel as isize;
        let pad = spec.pad() as isize;
        let cin = spec.in_per_group();
        Tensor::from_fn(Shape::new(s.n, spec.out_ch, oh, ow), |n, co, oy, ox| {
            let g = co / spec.out_per_group();
            let mut acc = p.bias.as_ref().map_or(0.0, |b| b[co]);
            for ci in 0..cin {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * spec.stride) as isize + ky - pad;
                        let ix = (ox * spec.stride) as isize + kx - pad;
                        let v = match spec.padding {
                            Padding::Reflect => input.at(
                                n,
                                g * cin + ci,
                                reflect_index(iy, s.h),
                                reflect_index(ix, s.w),
                            ),
                            Padding::Zero => {
                                if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                    0.0
                                } else {
                                    input.at(n, g * cin + ci, iy as usize, ix as usize)
                                }
                            }
                        };
                        let w = p.weight.at(co, ci, ky as usize, kx as usize);
                        acc += w * v;
                    }
                }
            }
            acc
        })
    }

    fn pseudo(shape: Shape, seed: u64) -> Tensor<f64> {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Tensor::from_fn(shape, |_, _, _, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn identity_pointwise_returns_input() {
        let spec = ConvSpec::pointwise(3, 3);
        let w = Tensor::from_fn(spec.weight_shape(), |o, i, _, _| if o == i { 1.0 } else { 0.0 });
        let p = ConvParams::new(spec, w, Some(vec![0.0; 3])).unwrap();
        let x = pseudo(Shape::new(2, 3, 4, 5), 1);
        assert_eq!(conv2d(&x, &p).unwrap(), x);
    }

    #[test]
    fn ones_depthwise_on_constant_reflect_input() {
        let spec = ConvSpec::depthwise(2, 3, Padding::Reflect);
        let p = ConvParams::new(spec, Tensor::full(spec.weight_shape(), 1.0), None).unwrap();
        let x = Tensor::full(Shape::new(1, 2, 4, 4), 7.0);
        let y = conv2d(&x, &p).unwrap();
        assert!(y.data().iter().all(|&v| v == 63.0));
        assert_eq!(spec.macs(4, 4), 288);
    }

    #[test]
    fn matches_direct_oracle_across_geometries() {
        let cases = [
            (ConvSpec::dense(3, 4, 3, Padding::Reflect), Shape::new(2, 3, 5, 6)),
            (ConvSpec::dense(3, 4, 3, Padding::Zero), Shape::new(2, 3, 5, 6)),
            (ConvSpec::depthwise(4, 5, Padding::Reflect), Shape::new(1, 4, 6, 7)),
            (ConvSpec::depthwise(4, 5, Padding::Reflect), Shape::new(1, 4, 2, 3)),
            (ConvSpec::pointwise(5, 2), Shape::new(3, 5, 3, 3)),
            (
                ConvSpec {
                    in_ch: 4,
                    out_ch: 6,
                    kernel: 3,
                    stride: 2,
                    groups: 2,
                    padding: Padding::Reflect,
                },
                Shape::new(2, 4, 7, 6),
            ),
        ];
        for (i, (spec, shape)) in cases.into_iter().enumerate() {
            let w = pseudo(spec.weight_shape(), 10 + i as u64);
            let b = pseudo(Shape::new(1, spec.out_ch, 1, 1), 20 + i as u64).into_data();
            let p = ConvParams::new(spec, w, Some(b)).unwrap();
            let x = pseudo(shape, 30 + i as u64);
            let fast = conv2d(&x, &p).unwrap();
            let slow = direct_conv(&x, &p);
            assert_eq!(fast.shape(), slow.shape());
            assert!(fast.max_abs_diff(&slow) < 1e-12, "case {i}");
        }
    }

    #[test]
    fn stride_two_output_is_ceil() {
        let spec = ConvSpec {
            in_ch: 1,
            out_ch: 1,
            kernel: 3,
            stride: 2,
            groups: 1,
            padding: Padding::Reflect,
        };
        assert_eq!(spec.output_hw(5, 6), (3, 3));
    }

    #[test]
    fn rejects_bad_geometry() {
        let even = ConvSpec::dense(2, 2, 2, Padding::Reflect);
        assert!(matches!(even.validate(), Err(Error::Config(_))));
        let groups = ConvSpec {
            in_ch: 3,
            out_ch: 4,
            kernel: 3,
            stride: 1,
            groups: 2,
            padding: Padding::Reflect,
        };
        assert!(groups.validate().is_err());
        let spec = ConvSpec::pointwise(3, 2);
        let w = vec![0.0f64; spec.weight_len()];
        let x = Tensor::zeros(Shape::new(1, 4, 2, 2));
        assert!(matches!(
            conv2d_raw(&x, &w, None, &spec),
            Err(Error::Config(_))
        ));
    }
}
