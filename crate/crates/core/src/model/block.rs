//! Gated convolution block and the optional SE / ECA channel attention.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::config::{eca_kernel, reduced_width, Attention, ModelConfig, Nonlinearity};
use crate::model::layers::{Builder, ConvLayer, Ctx, NormLayer};
use crate::model::params::{Init, ParamId, ParamKind, ParamStore};
use crate::ops::{self, Activation, ConvSpec, NormCache};
use crate::tensor::{Float, Shape, Tensor};

/// Squeeze-and-excitation: GAP, reduce, ReLU, expand, sigmoid, rescale.
#[derive(Clone, Debug)]
pub struct SeModule {
    pub reduce: ConvLayer,
    pub expand: ConvLayer,
}

/// Efficient channel attention: GAP, 1-D conv across channels, sigmoid,
/// rescale.
#[derive(Clone, Debug)]
pub struct EcaModule {
    pub name: String,
    pub kernel: ParamId,
    pub kernel_len: usize,
}

#[derive(Clone, Debug)]
pub enum ChannelAttention {
    Se(SeModule),
    Eca(EcaModule),
}

#[derive(Clone, Debug)]
pub struct AttentionCache<T> {
    input: Tensor<T>,
    pooled: Tensor<T>,
    hidden_pre: Tensor<T>,
    hidden: Tensor<T>,
    logits: Tensor<T>,
    scale: Tensor<T>,
}

impl ChannelAttention {
    pub fn build<T: Float, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, kind: Attention, c: usize) -> Option<Self> {
        match kind {
            Attention::None => None,
            Attention::Se => {
                let d = reduced_width(c);
                Some(ChannelAttention::Se(SeModule {
                    reduce: b.conv(&format!("{name}.se_reduce"), ConvSpec::pointwise(c, d), true),
                    expand: b.conv(&format!("{name}.se_expand"), ConvSpec::pointwise(d, c), true),
                }))
            }
            Attention::Eca => {
                let k = eca_kernel(c);
                let std = b.fan_std(k, k);
                let kernel = b.store.add(
                    format!("{name}.eca.weight"),
                    ParamKind::Weight,
                    Shape::new(1, 1, 1, k),
                    Init::TruncNormal(std),
                    b.rng,
                );
                Some(ChannelAttention::Eca(EcaModule {
                    name: format!("{name}.eca"),
                    kernel,
                    kernel_len: k,
                }))
            }
        }
    }

    pub fn forward<T: Float>(&self, ctx: &mut Ctx<T>, x: &Tensor<T>) -> Result<(Tensor<T>, AttentionCache<T>)> {
        let pooled = ops::global_avg_pool(x);
        let (hidden_pre, hidden, logits) = match self {
            ChannelAttention::Se(se) => {
                let (h, _) = se.reduce.forward(ctx, &pooled)?;
                let hr = ops::relu(&h);
                let (e, _) = se.expand.forward(ctx, &hr)?;
                (h, hr, e)
            }
            ChannelAttention::Eca(eca) => {
                let e = ops::channel_conv1d(&pooled, ctx.store.value(eca.kernel))?;
                (Tensor::empty(), Tensor::empty(), e)
            }
        };
        let scale = ops::sigmoid(&logits);
        let y = ops::channel_scale(x, &scale)?;
        let cache = AttentionCache {
            input: ctx.keep(x),
            pooled,
            hidden_pre,
            hidden,
            logits,
            scale,
        };
        Ok((y, cache))
    }

    pub fn backward<T: Float>(
        &self,
        store: &mut ParamStore<T>,
        cache: &AttentionCache<T>,
        grad: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let (mut gx, gscale) = ops::channel_scale_backward(&cache.input, &cache.scale, grad);
        let glogits = Activation::Sigmoid.backward(&cache.logits, &gscale);
        let gpooled = match self {
            ChannelAttention::Se(se) => {
                let ghr = se
                    .expand
                    .backward(store, &cache.hidden, &glogits, true)?
                    .expect("input grad");
                let gh = Activation::Relu.backward(&cache.hidden_pre, &ghr);
                se.reduce
                    .backward(store, &cache.pooled, &gh, true)?
                    .expect("input grad")
            }
            ChannelAttention::Eca(eca) => {
                let (gp, gk) = ops::channel_conv1d_backward(&cache.pooled, store.value(eca.kernel), &glogits);
                store.accumulate_grad(eca.kernel, &gk);
                gp
            }
        };
        gx.add_assign(&ops::global_avg_pool_backward(&gpooled, cache.input.shape()))?;
        Ok(gx)
    }
}

/// Residual block `y = x + PW3(gate(PW1(x̂)) * DW(PW2(x̂)))`, `x̂ = Norm(x)`.
#[derive(Clone, Debug)]
pub struct GConvBlock {
    pub name: String,
    pub channels: usize,
    /// `None` once the norm has been folded into `pw1`/`pw2`.
    pub norm: Option<NormLayer>,
    pub pw1: ConvLayer,
    pub pw2: ConvLayer,
    pub dw: ConvLayer,
    pub pw3: ConvLayer,
    pub gate: Activation,
    pub combine: Nonlinearity,
    pub attention: Option<ChannelAttention>,
}

#[derive(Clone, Debug)]
pub struct GConvCache<T> {
    norm: Option<NormCache<T>>,
    xhat: Tensor<T>,
    pre_gate: Tensor<T>,
    gated: Tensor<T>,
    pw2_out: Tensor<T>,
    branch: Tensor<T>,
    mixed: Tensor<T>,
    attention: Option<AttentionCache<T>>,
}

impl GConvBlock {
    pub fn build<T: Float, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, c: usize, cfg: &ModelConfig) -> Self {
        let norm = b.norm(&format!("{name}.norm"), cfg.norm_kind, c);
        let pw1 = b.conv(&format!("{name}.pw1"), ConvSpec::pointwise(c, c), true);
        let pw2 = b.conv(&format!("{name}.pw2"), ConvSpec::pointwise(c, c), true);
        let dw = b.conv(
            &format!("{name}.dw"),
            ConvSpec::depthwise(c, cfg.dw_kernel, cfg.padding),
            true,
        );
        let pw3 = b.conv(&format!("{name}.pw3"), ConvSpec::pointwise(c, c), true);
        let attention = ChannelAttention::build(b, name, cfg.extra_attention, c);
        let gate = match cfg.nonlin_ablation {
            Nonlinearity::Gating => cfg.gate_kind.activation(),
            Nonlinearity::ReluSum => Activation::Relu,
            Nonlinearity::GeluSum => Activation::Gelu,
        };
        Self {
            name: name.to_string(),
            channels: c,
            norm: Some(norm),
            pw1,
            pw2,
            dw,
            pw3,
            gate,
            combine: cfg.nonlin_ablation,
            attention,
        }
    }

    pub fn forward<T: Float>(&self, ctx: &mut Ctx<T>, x: &Tensor<T>) -> Result<(Tensor<T>, GConvCache<T>)> {
        if x.shape().c != self.channels {
            return Err(Error::config(format!(
                "{} expects {} channels, got {}",
                self.name,
                self.channels,
                x.shape()
            )));
        }
        let (xhat, norm_cache) = match &self.norm {
            Some(n) => {
                let (y, c) = n.forward(ctx, x)?;
                (y, Some(c))
            }
            None => (x.clone(), None),
        };
        let (pre_gate, _) = self.pw1.forward(ctx, &xhat)?;
        let gated = self.gate.forward(&pre_gate);
        let (pw2_out, _) = self.pw2.forward(ctx, &xhat)?;
        let (branch, _) = self.dw.forward(ctx, &pw2_out)?;
        let mixed = match self.combine {
            Nonlinearity::Gating => gated.mul(&branch)?,
            Nonlinearity::ReluSum | Nonlinearity::GeluSum => gated.add(&branch)?,
        };
        let (mut y, _) = self.pw3.forward(ctx, &mixed)?;
        let attention = match &self.attention {
            Some(a) => {
                let (z, c) = a.forward(ctx, &y)?;
                y = z;
                Some(c)
            }
            None => None,
        };
        y.add_assign(x)?;
        ctx.watch(&self.name, &y);
        let cache = GConvCache {
            norm: norm_cache,
            xhat: ctx.keep(&xhat),
            gated: ctx.keep(&gated),
            pre_gate: ctx.keep(&pre_gate),
            pw2_out: ctx.keep(&pw2_out),
            branch: ctx.keep(&branch),
            mixed: ctx.keep(&mixed),
            attention,
        };
        Ok((y, cache))
    }

    pub fn backward<T: Float>(
        &self,
        store: &mut ParamStore<T>,
        cache: &GConvCache<T>,
        grad: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let mut g = grad.clone();
        if let (Some(a), Some(ac)) = (&self.attention, &cache.attention) {
            g = a.backward(store, ac, &g)?;
        }
        let gmixed = self.pw3.backward(store, &cache.mixed, &g, true)?.expect("input grad");
        let (ggated, gbranch) = match self.combine {
            Nonlinearity::Gating => (gmixed.mul(&cache.branch)?, gmixed.mul(&cache.gated)?),
            _ => (gmixed.clone(), gmixed),
        };
        let gpw2 = self.dw.backward(store, &cache.pw2_out, &gbranch, true)?.expect("input grad");
        let gpre = self.gate.backward(&cache.pre_gate, &ggated);
        let mut gxhat = self.pw1.backward(store, &cache.xhat, &gpre, true)?.expect("input grad");
        gxhat.add_assign(&self.pw2.backward(store, &cache.xhat, &gpw2, true)?.expect("input grad"))?;
        let gx_branch = match (&self.norm, &cache.norm) {
            (Some(n), Some(nc)) => n.backward(store, nc, &gxhat)?,
            _ => gxhat,
        };
        let mut gx = grad.clone();
        gx.add_assign(&gx_branch)?;
        Ok(gx)
    }
}
