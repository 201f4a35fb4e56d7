//! Skip-connection fusion: SK (softmax-weighted), concatenation and sum.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::config::{reduced_width, FusionKind};
use crate::model::layers::{Builder, ConvLayer, Ctx};
use crate::model::params::ParamStore;
use crate::ops::{self, Activation, ConvSpec};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Debug)]
pub enum FusionOp {
    /// `a1 f(x1) + a2 x2`, weights from softmax(MLP(GAP(f(x1) + x2))).
    Sk { mlp_reduce: ConvLayer, mlp_expand: ConvLayer },
    /// `PW([f(x1), x2])`.
    Concat { proj: ConvLayer },
    /// `f(x1) + x2`.
    Sum,
}

#[derive(Clone, Debug)]
pub struct Fusion {
    pub name: String,
    pub channels: usize,
    /// The pointwise projection `f` applied to the skip features.
    pub skip: ConvLayer,
    pub op: FusionOp,
}

#[derive(Clone, Debug)]
pub struct FusionCache<T> {
    skip_in: Tensor<T>,
    projected: Tensor<T>,
    main: Tensor<T>,
    pooled: Tensor<T>,
    hidden_pre: Tensor<T>,
    hidden: Tensor<T>,
    weights: Tensor<T>,
    concat: Tensor<T>,
}

/// Fusion weights `(a1, a2)` for inspection, each `(B, C, 1, 1)`.
pub struct FusionWeights<T> {
    pub skip: Tensor<T>,
    pub main: Tensor<T>,
}

impl Fusion {
    pub fn build<T: Float, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, c: usize, kind: FusionKind) -> Self {
        let skip = b.conv(&format!("{name}.skip"), ConvSpec::pointwise(c, c), true);
        let op = match kind {
            FusionKind::Sk => {
                let d = reduced_width(c);
                FusionOp::Sk {
                    mlp_reduce: b.conv(&format!("{name}.mlp_reduce"), ConvSpec::pointwise(c, d), true),
                    mlp_expand: b.conv(&format!("{name}.mlp_expand"), ConvSpec::pointwise(d, 2 * c), true),
                }
            }
            FusionKind::Concat => FusionOp::Concat {
                proj: b.conv(&format!("{name}.proj"), ConvSpec::pointwise(2 * c, c), true),
            },
            FusionKind::Sum => FusionOp::Sum,
        };
        Self {
            name: name.to_string(),
            channels: c,
            skip,
            op,
        }
    }

    pub fn forward<T: Float>(
        &self,
        ctx: &mut Ctx<T>,
        skip: &Tensor<T>,
        main: &Tensor<T>,
    ) -> Result<(Tensor<T>, FusionCache<T>)> {
        let (ss, ms) = (skip.shape(), main.shape());
        if (ss.n, ss.h, ss.w) != (ms.n, ms.h, ms.w) {
            return Err(Error::shape(format!(
                "{}: skip {ss} and main {ms} differ spatially",
                self.name
            )));
        }
        if ms.c != self.channels {
            return Err(Error::config(format!(
                "{}: main path has {} channels, expected {}",
                self.name, ms.c, self.channels
            )));
        }
        let (projected, _) = self.skip.forward(ctx, skip)?;
        let mut cache = FusionCache {
            skip_in: ctx.keep(skip),
            projected: Tensor::empty(),
            main: Tensor::empty(),
            pooled: Tensor::empty(),
            hidden_pre: Tensor::empty(),
            hidden: Tensor::empty(),
            weights: Tensor::empty(),
            concat: Tensor::empty(),
        };
        let y = match &self.op {
            FusionOp::Sk {
                mlp_reduce,
                mlp_expand,
            } => {
                let pooled = ops::global_avg_pool(&projected.add(main)?);
                let (hidden_pre, _) = mlp_reduce.forward(ctx, &pooled)?;
                let hidden = ops::relu(&hidden_pre);
                let (logits, _) = mlp_expand.forward(ctx, &hidden)?;
                let weights = ops::softmax_over_branches(&logits, 2)?;
                let (a1, a2) = weights.split_channels(self.channels)?;
                let mut y = ops::channel_scale(&projected, &a1)?;
                y.add_assign(&ops::channel_scale(main, &a2)?)?;
                cache.pooled = pooled;
                cache.hidden_pre = hidden_pre;
                cache.hidden = hidden;
                cache.weights = weights;
                cache.projected = ctx.keep(&projected);
                cache.main = ctx.keep(main);
                y
            }
            FusionOp::Concat { proj } => {
                let cat = Tensor::concat_channels(&projected, main)?;
                let (y, _) = proj.forward(ctx, &cat)?;
                cache.concat = ctx.keep(&cat);
                y
            }
            FusionOp::Sum => projected.add(main)?,
        };
        ctx.watch(&self.name, &y);
        Ok((y, cache))
    }

    /// Returns `(grad_skip, grad_main)`.
    pub fn backward<T: Float>(
        &self,
        store: &mut ParamStore<T>,
        cache: &FusionCache<T>,
        grad: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let (gproj, gmain) = match &self.op {
            FusionOp::Sk {
                mlp_reduce,
                mlp_expand,
            } => {
                let (a1, a2) = cache.weights.split_channels(self.channels)?;
                let (mut gproj, ga1) = ops::channel_scale_backward(&cache.projected, &a1, grad);
                let (mut gmain, ga2) = ops::channel_scale_backward(&cache.main, &a2, grad);
                let gw = Tensor::concat_channels(&ga1, &ga2)?;
                let glogits = ops::softmax_over_branches_backward(&cache.weights, &gw, 2)?;
                let ghidden = mlp_expand
                    .backward(store, &cache.hidden, &glogits, true)?
                    .expect("input grad");
                let gpre = Activation::Relu.backward(&cache.hidden_pre, &ghidden);
                let gpooled = mlp_reduce
                    .backward(store, &cache.pooled, &gpre, true)?
                    .expect("input grad");
                let gsum = ops::global_avg_pool_backward(&gpooled, grad.shape());
                gproj.add_assign(&gsum)?;
                gmain.add_assign(&gsum)?;
                (gproj, gmain)
            }
            FusionOp::Concat { proj } => {
                let gcat = proj
                    .backward(store, &cache.concat, grad, true)?
                    .expect("input grad");
                gcat.split_channels(self.channels)?
            }
            FusionOp::Sum => (grad.clone(), grad.clone()),
        };
        let gskip = self
            .skip
            .backward(store, &cache.skip_in, &gproj, true)?
            .expect("input grad");
        Ok((gskip, gmain))
    }

    /// The SK fusion weights for a given input pair (SK fusion only).
    pub fn weights<T: Float>(
        &self,
        ctx: &mut Ctx<T>,
        skip: &Tensor<T>,
        main: &Tensor<T>,
    ) -> Result<Option<FusionWeights<T>>> {
        let record = ctx.record;
        ctx.record = true;
        let out = self.forward(ctx, skip, main);
        ctx.record = record;
        let (_, cache) = out?;
        if cache.weights.numel() == 0 {
            return Ok(None);
        }
        let (a1, a2) = cache.weights.split_channels(self.channels)?;
        Ok(Some(FusionWeights { skip: a1, main: a2 }))
    }
}
