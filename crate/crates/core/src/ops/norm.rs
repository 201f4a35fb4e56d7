//! Batch (with ghost groups), layer and instance normalization, and folding
//! of inference-mode batch norm into a following convolution.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::conv::{ConvParams, Padding};
use crate::tensor::{Float, Shape, Tensor};

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    /// Batch statistics, running statistics updated.
    #[default]
    Train,
    /// Running statistics, no updates, for inference.
    Eval,
    /// Running statistics during training (FrozenBN): a fixed affine map.
    Frozen,
}

/// Number of samples pooled into one batch-norm statistics group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum GhostSize {
    #[default]
    Full,
    Size(usize),
}

impl GhostSize {
    pub fn resolve(self, batch: usize) -> Result<usize> {
        match self {
            GhostSize::Full => Ok(batch),
            GhostSize::Size(0) => Err(Error::config("ghost batch size must be positive")),
            GhostSize::Size(g) if g > batch || batch % g != 0 => Err(Error::config(format!(
                "ghost batch size {g} does not divide batch size {batch}"
            ))),
            GhostSize::Size(g) => Ok(g),
        }
    }
}

impl std::str::FromStr for GhostSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("full") {
            return Ok(GhostSize::Full);
        }
        match s.parse::<usize>() {
            Ok(g) if g > 0 => Ok(GhostSize::Size(g)),
            _ => Err(Error::config(format!(
                "ghost size must be a positive integer or \"full\", got `{s}`"
            ))),
        }
    }
}

impl std::fmt::Display for GhostSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GhostSize::Full => f.write_str("full"),
            GhostSize::Size(g) => write!(f, "{g}"),
        }
    }
}

impl Serialize for GhostSize {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            GhostSize::Full => s.serialize_str("full"),
            GhostSize::Size(g) => s.serialize_u64(*g as u64),
        }
    }
}

impl<'de> Deserialize<'de> for GhostSize {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(0) => Err(serde::de::Error::custom("ghost size must be positive")),
            Raw::Int(g) => Ok(GhostSize::Size(g as usize)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BnConfig {
    pub mode: NormMode,
    pub ghost: GhostSize,
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BnConfig {
    fn default() -> Self {
        Self {
            mode: NormMode::Train,
            ghost: GhostSize::Full,
            momentum: BN_MOMENTUM,
            eps: NORM_EPS,
        }
    }
}

/// Values saved by a normalization forward pass for its backward pass.
#[derive(Clone, Debug)]
pub struct NormCache<T> {
    /// Normalized, pre-affine input.
    pub xhat: Tensor<T>,
    /// `1/sqrt(var + eps)` per statistics group.
    pub inv_std: Vec<T>,
    /// Whether the statistics came from the input (so gradients flow through
    /// them) or are constants.
    pub batch_stats: bool,
    /// Samples per ghost group (batch norm only).
    pub group: usize,
}

pub struct BnOutput<T> {
    pub output: Tensor<T>,
    pub cache: NormCache<T>,
    /// New `(running_mean, running_var)` when the mode updates them.
    pub running: Option<(Vec<T>, Vec<T>)>,
}

fn check_affine<T>(c: usize, gamma: &[T], beta: &[T]) -> Result<()> {
    if gamma.len() != c || beta.len() != c {
        return Err(Error::config(format!(
            "normalization over {c} channels given {} / {} affine parameters",
            gamma.len(),
            beta.len()
        )));
    }
    Ok(())
}

/// Batch normalization forward. `running_mean`/`running_var` are read in
/// eval/frozen mode and used as the EMA base in train mode; they are never
/// written here, the caller applies [`BnOutput::running`].
pub fn batch_norm_forward<T: Float>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    cfg: &BnConfig,
) -> Result<BnOutput<T>> {
    let s = x.shape();
    check_affine(s.c, gamma, beta)?;
    check_affine(s.c, running_mean, running_var)?;
    let eps = T::c(cfg.eps);
    let p = s.plane();

    if cfg.mode != NormMode::Train {
        let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = Tensor::zeros(s);
        let mut out = Tensor::zeros(s);
        xhat.data_mut()
            .par_chunks_mut(p)
            .zip(out.data_mut().par_chunks_mut(p))
            .enumerate()
            .for_each(|(idx, (xh, o))| {
                let c = idx % s.c;
                let src = x.plane(idx / s.c, c);
                for ((h, ov), &v) in xh.iter_mut().zip(o.iter_mut()).zip(src) {
                    *h = (v - running_mean[c]) * inv_std[c];
                    *ov = gamma[c] * *h + beta[c];
                }
            });
        return Ok(BnOutput {
            output: out,
            cache: NormCache {
                xhat,
                inv_std,
                batch_stats: false,
                group: s.n,
            },
            running: None,
        });
    }

    let group = cfg.ghost.resolve(s.n)?;
    let n_groups = s.n / group;
    let m = group * p;
    // (mean, biased var) per (group, channel), row-major over groups.
    let stats: Vec<(T, T)> = (0..n_groups * s.c)
        .into_par_iter()
        .map(|gi| {
            let (g, c) = (gi / s.c, gi % s.c);
            let mut sum = T::zero();
            for n in g * group..(g + 1) * group {
                for &v in x.plane(n, c) {
                    sum += v;
                }
            }
            let mean = sum / T::c(m as f64);
            let mut sq = T::zero();
            for n in g * group..(g + 1) * group {
                for &v in x.plane(n, c) {
                    let d = v - mean;
                    sq += d * d;
                }
            }
            (mean, sq / T::c(m as f64))
        })
        .collect();
    let inv_std: Vec<T> = stats.iter().map(|&(_, v)| T::one() / (v + eps).sqrt()).collect();

    let mut xhat = Tensor::zeros(s);
    let mut out = Tensor::zeros(s);
    xhat.data_mut()
        .par_chunks_mut(p)
        .zip(out.data_mut().par_chunks_mut(p))
        .enumerate()
        .for_each(|(idx, (xh, o))| {
            let (n, c) = (idx / s.c, idx % s.c);
            let gi = (n / group) * s.c + c;
            let (mean, _) = stats[gi];
            let is = inv_std[gi];
            for ((h, ov), &v) in xh.iter_mut().zip(o.iter_mut()).zip(x.plane(n, c)) {
                *h = (v - mean) * is;
                *ov = gamma[c] * *h + beta[c];
            }
        });

    let mom = T::c(cfg.momentum);
    let unbias = if m > 1 {
        T::c(m as f64 / (m as f64 - 1.0))
    } else {
        T::one()
    };
    let groups_f = T::c(n_groups as f64);
    let mut new_mean = Vec::with_capacity(s.c);
    let mut new_var = Vec::with_capacity(s.c);
    for c in 0..s.c {
        let mut bm = T::zero();
        let mut bv = T::zero();
        for g in 0..n_groups {
            let (mean, var) = stats[g * s.c + c];
            bm += mean;
            bv += var * unbias;
        }
        bm = bm / groups_f;
        bv = bv / groups_f;
        new_mean.push((T::one() - mom) * running_mean[c] + mom * bm);
        new_var.push((T::one() - mom) * running_var[c] + mom * bv);
    }

    Ok(BnOutput {
        output: out,
        cache: NormCache {
            xhat,
            inv_std,
            batch_stats: true,
            group,
        },
        running: Some((new_mean, new_var)),
    })
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batch_norm_backward<T: Float>(
    cache: &NormCache<T>,
    gamma: &[T],
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let s = grad_out.shape();
    cache.xhat.expect_same_shape(grad_out)?;
    let p = s.plane();

    let (dgamma, dbeta): (Vec<T>, Vec<T>) = (0..s.c)
        .into_par_iter()
        .map(|c| {
            let mut dg = T::zero();
            let mut db = T::zero();
            for n in 0..s.n {
                for (&g, &h) in grad_out.plane(n, c).iter().zip(cache.xhat.plane(n, c)) {
                    dg += g * h;
                    db += g;
                }
            }
            (dg, db)
        })
        .unzip();

    let mut gin = Tensor::zeros(s);
    if !cache.batch_stats {
        gin.data_mut()
            .par_chunks_mut(p)
            .enumerate()
            .for_each(|(idx, gi)| {
                let c = idx % s.c;
                let scale = gamma[c] * cache.inv_std[c];
                for (o, &g) in gi.iter_mut().zip(grad_out.plane(idx / s.c, c)) {
                    *o = g * scale;
                }
            });
        return Ok((gin, dgamma, dbeta));
    }

    let group = cache.group;
    let n_groups = s.n / group;
    let m = T::c((group * p) as f64);
    // Per (group, channel): sum(dy) and sum(dy * xhat).
    let sums: Vec<(T, T)> = (0..n_groups * s.c)
        .into_par_iter()
        .map(|gi| {
            let (g, c) = (gi / s.c, gi % s.c);
            let mut sd = T::zero();
            let mut sdx = T::zero();
            for n in g * group..(g + 1) * group {
                for (&dy, &h) in grad_out.plane(n, c).iter().zip(cache.xhat.plane(n, c)) {
                    sd += dy;
                    sdx += dy * h;
                }
            }
            (sd, sdx)
        })
        .collect();
    gin.data_mut()
        .par_chunks_mut(p)
        .enumerate()
        .for_each(|(idx, gi)| {
            let (n, c) = (idx / s.c, idx % s.c);
            let k = (n / group) * s.c + c;
            let (sd, sdx) = sums[k];
            let scale = gamma[c] * cache.inv_std[k] / m;
            for ((o, &dy), &h) in gi
                .iter_mut()
                .zip(grad_out.plane(n, c))
                .zip(cache.xhat.plane(n, c))
            {
                *o = scale * (m * dy - sd - h * sdx);
            }
        });
    Ok((gin, dgamma, dbeta))
}

/// Self-contained batch-norm layer state.
#[derive(Clone, Debug, PartialEq)]
pub struct NormState<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub momentum: f64,
    pub mode: NormMode,
    pub ghost: GhostSize,
}

impl<T: Float> NormState<T> {
    /// Fresh statistics (mean 0, var 1) and identity affine.
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            momentum: BN_MOMENTUM,
            mode: NormMode::Train,
            ghost: GhostSize::Full,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn config(&self) -> BnConfig {
        BnConfig {
            mode: self.mode,
            ghost: self.ghost,
            momentum: self.momentum,
            eps: NORM_EPS,
        }
    }
}

/// Batch norm on a [`NormState`], applying the running-statistics update in
/// train mode.
pub fn batch_norm<T: Float>(input: &Tensor<T>, state: &mut NormState<T>) -> Result<Tensor<T>> {
    let out = batch_norm_forward(
        input,
        &state.gamma,
        &state.beta,
        &state.running_mean,
        &state.running_var,
        &state.config(),
    )?;
    if let Some((m, v)) = out.running {
        state.running_mean = m;
        state.running_var = v;
    }
    Ok(out.output)
}

/// Statistics pooled over `(C, H, W)` per sample (layer) or over `(H, W)` per
/// sample and channel (instance).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleNorm {
    Layer,
    Instance,
}

impl SampleNorm {
    fn segment(self, s: Shape) -> usize {
        match self {
            SampleNorm::Layer => s.c * s.plane(),
            SampleNorm::Instance => s.plane(),
        }
    }
}

pub fn sample_norm_forward<T: Float>(
    kind: SampleNorm,
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
) -> Result<(Tensor<T>, NormCache<T>)> {
    let s = x.shape();
    check_affine(s.c, gamma, beta)?;
    let seg = kind.segment(s);
    let p = s.plane();
    let eps = T::c(NORM_EPS);
    let mut xhat = Tensor::zeros(s);
    let mut out = Tensor::zeros(s);
    let inv_std: Vec<T> = xhat
        .data_mut()
        .par_chunks_mut(seg)
        .zip(out.data_mut().par_chunks_mut(seg))
        .zip(x.data().par_chunks(seg))
        .enumerate()
        .map(|(si, ((xh, o), src))| {
            let len = T::c(seg as f64);
            let mean = src.iter().copied().sum::<T>() / len;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / len;
            let is = T::one() / (var + eps).sqrt();
            for (i, ((h, ov), &v)) in xh.iter_mut().zip(o.iter_mut()).zip(src).enumerate() {
                let c = match kind {
                    SampleNorm::Layer => i / p,
                    SampleNorm::Instance => si % s.c,
                };
                *h = (v - mean) * is;
                *ov = gamma[c] * *h + beta[c];
            }
            is
        })
        .collect();
    Ok((
        out,
        NormCache {
            xhat,
            inv_std,
            batch_stats: true,
            group: 1,
        },
    ))
}

pub fn sample_norm_backward<T: Float>(
    kind: SampleNorm,
    cache: &NormCache<T>,
    gamma: &[T],
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let s = grad_out.shape();
    cache.xhat.expect_same_shape(grad_out)?;
    let seg = kind.segment(s);
    let p = s.plane();
    let channel_of = |si: usize, i: usize| match kind {
        SampleNorm::Layer => i / p,
        SampleNorm::Instance => si % s.c,
    };

    let mut dgamma = vec![T::zero(); s.c];
    let mut dbeta = vec![T::zero(); s.c];
    for n in 0..s.n {
        for c in 0..s.c {
            for (&g, &h) in grad_out.plane(n, c).iter().zip(cache.xhat.plane(n, c)) {
                dgamma[c] += g * h;
                dbeta[c] += g;
            }
        }
    }

    let mut gin = Tensor::zeros(s);
    gin.data_mut()
        .par_chunks_mut(seg)
        .zip(grad_out.data().par_chunks(seg))
        .zip(cache.xhat.data().par_chunks(seg))
        .enumerate()
        .for_each(|(si, ((gi, dy), xh))| {
            let m = T::c(seg as f64);
            let mut sd = T::zero();
            let mut sdx = T::zero();
            for (i, (&d, &h)) in dy.iter().zip(xh).enumerate() {
                let dxh = d * gamma[channel_of(si, i)];
                sd += dxh;
                sdx += dxh * h;
            }
            let scale = cache.inv_std[si] / m;
            for (i, ((o, &d), &h)) in gi.iter_mut().zip(dy).zip(xh).enumerate() {
                let dxh = d * gamma[channel_of(si, i)];
                *o = scale * (m * dxh - sd - h * sdx);
            }
        });
    Ok((gin, dgamma, dbeta))
}

pub fn layer_norm<T: Float>(input: &Tensor<T>, gamma: &[T], beta: &[T]) -> Result<Tensor<T>> {
    Ok(sample_norm_forward(SampleNorm::Layer, input, gamma, beta)?.0)
}

pub fn instance_norm<T: Float>(input: &Tensor<T>, gamma: &[T], beta: &[T]) -> Result<Tensor<T>> {
    Ok(sample_norm_forward(SampleNorm::Instance, input, gamma, beta)?.0)
}

/// Per-channel `(scale, shift)` such that inference-mode batch norm is
/// `x * scale + shift`.
pub fn bn_affine<T: Float>(
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
) -> (Vec<T>, Vec<T>) {
    let eps = T::c(NORM_EPS);
    gamma
        .iter()
        .zip(beta)
        .zip(running_mean.iter().zip(running_var))
        .map(|((&g, &b), (&m, &v))| {
            let a = g / (v + eps).sqrt();
            (a, b - a * m)
        })
        .unzip()
}

/// Merges an inference-mode batch norm into the convolution that consumes its
/// output. Zero padding with `k > 1` cannot be folded exactly (padded zeros
/// bypass the shift), so it is rejected along with train-mode states.
pub fn fold_norm_into_conv<T: Float>(
    state: &NormState<T>,
    params: &ConvParams<T>,
) -> Result<ConvParams<T>> {
    if state.mode == NormMode::Train {
        return Err(Error::Contract(
            "cannot fold a batch norm that is in train mode".into(),
        ));
    }
    let spec = params.spec;
    if state.channels() != spec.in_ch {
        return Err(Error::config(format!(
            "norm over {} channels cannot feed a convolution with {} inputs",
            state.channels(),
            spec.in_ch
        )));
    }
    if spec.padding == Padding::Zero && spec.kernel > 1 {
        return Err(Error::Contract(
            "zero-padded convolutions cannot absorb a normalization shift".into(),
        ));
    }
    let (scale, shift) = bn_affine(
        &state.gamma,
        &state.beta,
        &state.running_mean,
        &state.running_var,
    );
    let (w, b) = fold_affine_into_conv(&scale, &shift, params.weight.data(), params.bias.as_deref(), &spec);
    ConvParams::new(spec, Tensor::from_vec(spec.weight_shape(), w)?, Some(b))
}

/// Raw-slice form of [`fold_norm_into_conv`]: returns folded weight and bias.
pub fn fold_affine_into_conv<T: Float>(
    scale: &[T],
    shift: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    spec: &crate::ops::conv::ConvSpec,
) -> (Vec<T>, Vec<T>) {
    let cin = spec.in_per_group();
    let kk = spec.kernel * spec.kernel;
    let opg = spec.out_per_group();
    let mut w = weight.to_vec();
    let mut b: Vec<T> = bias.map_or_else(|| vec![T::zero(); spec.out_ch], <[T]>::to_vec);
    for co in 0..spec.out_ch {
        let g = co / opg;
        for ci in 0..cin {
            let c = g * cin + ci;
            for t in 0..kk {
                let idx = (co * cin + ci) * kk + t;
                b[co] += weight[idx] * shift[c];
                w[idx] = weight[idx] * scale[c];
            }
        }
    }
    (w, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::conv::{conv2d, ConvSpec};

    #[test]
    fn eval_identity_statistics_pass_input_through() {
        let x = Tensor::<f64>::from_fn(Shape::new(2, 3, 2, 2), |n, c, y, x| {
            (n + 2 * c + 3 * y + 5 * x) as f64 * 0.1
        });
        let mut st = NormState::new(3);
        st.mode = NormMode::Eval;
        let y = batch_norm(&x, &mut st).unwrap();
        let scale = 1.0 / (1.0 + NORM_EPS).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * scale).abs() < 1e-15);
        }
        assert_eq!(st.running_mean, vec![0.0; 3]);
    }

    #[test]
    fn two_point_batch_normalizes_to_plus_minus_one() {
        let x = Tensor::<f64>::from_vec(Shape::new(2, 1, 1, 1), vec![1.0, 3.0]).unwrap();
        let mut st = NormState::new(1);
        let y = batch_norm(&x, &mut st).unwrap();
        let expect = 1.0 / (1.0 + NORM_EPS).sqrt();
        assert!((y.data()[0] + expect).abs() < 1e-15);
        assert!((y.data()[1] - expect).abs() < 1e-15);
        // EMA: mean 2, unbiased var 2.
        assert!((st.running_mean[0] - 0.2).abs() < 1e-15);
        assert!((st.running_var[0] - (0.9 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn ghost_size_equal_to_batch_is_plain_bn() {
        let x = Tensor::<f64>::from_fn(Shape::new(4, 2, 3, 3), |n, c, y, x| {
            ((n * 7 + c * 3 + y * 5 + x * 11) % 13) as f64
        });
        let mut plain = NormState::new(2);
        let mut ghost = NormState::new(2);
        ghost.ghost = GhostSize::Size(4);
        let a = batch_norm(&x, &mut plain).unwrap();
        let b = batch_norm(&x, &mut ghost).unwrap();
        assert_eq!(a, b);
        assert_eq!(plain, NormState { ghost: GhostSize::Full, ..ghost });
    }

    #[test]
    fn ghost_size_must_divide_batch() {
        let x = Tensor::<f64>::zeros(Shape::new(6, 1, 2, 2));
        let mut st = NormState::new(1);
        st.ghost = GhostSize::Size(4);
        assert!(matches!(batch_norm(&x, &mut st), Err(Error::Config(_))));
        st.ghost = GhostSize::Size(3);
        assert!(batch_norm(&x, &mut st).is_ok());
    }

    #[test]
    fn frozen_mode_never_touches_statistics() {
        let x = Tensor::<f64>::from_fn(Shape::new(2, 2, 2, 2), |n, c, y, x| (n + c + y + x) as f64);
        let mut st = NormState::new(2);
        st.running_mean = vec![0.3, -0.2];
        st.running_var = vec![2.0, 0.5];
        st.mode = NormMode::Frozen;
        let before = st.clone();
        let a = batch_norm(&x, &mut st).unwrap();
        let b = batch_norm(&x, &mut st).unwrap();
        assert_eq!(a, b);
        assert_eq!(st, before);
    }

    #[test]
    fn constant_input_layer_and_instance_norm_yield_beta() {
        let x = Tensor::<f64>::full(Shape::new(2, 3, 4, 4), 5.5);
        let gamma = vec![2.0, 3.0, 4.0];
        let beta = vec![0.1, -0.2, 0.3];
        for y in [
            layer_norm(&x, &gamma, &beta).unwrap(),
            instance_norm(&x, &gamma, &beta).unwrap(),
        ] {
            for n in 0..2 {
                for c in 0..3 {
                    assert!(y.plane(n, c).iter().all(|&v| v == beta[c]));
                }
            }
        }
    }

    #[test]
    fn layer_norm_of_standardized_input_is_identity() {
        // Per-sample values {-1, 1, -1, 1}: mean 0, variance 1.
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 2, 2), vec![-1.0, 1.0, -1.0, 1.0]).unwrap();
        let y = layer_norm(&x, &[1.0], &[0.0]).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-5);
    }

    #[test]
    fn folding_train_mode_is_rejected() {
        let st = NormState::<f64>::new(2);
        let conv = ConvParams::zeros(ConvSpec::pointwise(2, 2), true).unwrap();
        assert!(matches!(fold_norm_into_conv(&st, &conv), Err(Error::Contract(_))));
    }

    #[test]
    fn fold_with_shift_matches_at_zero_input() {
        let mut st = NormState::<f64>::new(2);
        st.mode = NormMode::Eval;
        st.beta = vec![0.5, -1.5];
        st.running_mean = vec![0.25, 0.0];
        let spec = ConvSpec::dense(2, 3, 3, Padding::Reflect);
        let w = Tensor::from_fn(spec.weight_shape(), |o, i, y, x| (o as f64 - i as f64) * 0.1 + (y * 3 + x) as f64 * 0.01);
        let conv = ConvParams::new(spec, w, Some(vec![0.1, 0.2, 0.3])).unwrap();
        let folded = fold_norm_into_conv(&st, &conv).unwrap();
        let zero = Tensor::zeros(Shape::new(1, 2, 5, 5));
        let two_path = conv2d(&batch_norm(&zero, &mut st.clone()).unwrap(), &conv).unwrap();
        let one_path = conv2d(&zero, &folded).unwrap();
        assert!(two_path.max_abs_diff(&one_path) < 1e-12);
    }
}
