//! Full network: stem, encoder stages with downsampling, bottleneck, decoder
//! stages with upsampling and skip fusion, head, and the global residual.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::block::{GConvBlock, GConvCache};
use crate::model::config::ModelConfig;
use crate::model::fusion::{Fusion, FusionCache};
use crate::model::layers::{Builder, ConvLayer, Ctx};
use crate::model::params::{Init, ParamStore};
use crate::ops::norm::{bn_affine, fold_affine_into_conv};
use crate::ops::{self, ConvSpec, GhostSize, NormMode};
use crate::tensor::{Float, Tensor};


#[derive(Clone, Debug)]
pub struct Stage {
    pub blocks: Vec<GConvBlock>,
}

impl Stage {
    fn forward<T: Float>(&self, ctx: &mut Ctx<T>, x: Tensor<T>) -> Result<(Tensor<T>, Vec<GConvCache<T>>)> {
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut x = x;
        for b in &self.blocks {
            let (y, c) = b.forward(ctx, &x)?;
            caches.push(c);
            x = y;
        }
        Ok((x, caches))
    }

    fn backward<T: Float>(&self, store: &mut ParamStore<T>, caches: &[GConvCache<T>], grad: Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad;
        for (b, c) in self.blocks.iter().zip(caches).rev() {
            g = b.backward(store, c, &g)?;
        }
        Ok(g)
    }
}

#[derive(Clone, Debug)]
pub struct Gunet {
    pub config: ModelConfig,
    pub stem: ConvLayer,
    pub encoders: Vec<Stage>,
    /// Pixel-unshuffle by 2 followed by these pointwise convs.
    pub downs: Vec<ConvLayer>,
    pub bottleneck: Stage,
    /// These pointwise convs followed by pixel-shuffle by 2.
    pub ups: Vec<ConvLayer>,
    pub fusions: Vec<Fusion>,
    pub decoders: Vec<Stage>,
    pub head: ConvLayer,
    /// Mode used by [`Gunet::forward`] for batch-norm layers.
    pub norm_mode: NormMode,
    pub ghost: GhostSize,
}

#[derive(Clone, Debug)]
pub struct GunetCache<T> {
    in_h: usize,
    in_w: usize,
    padded: (usize, usize),
    stem_in: Tensor<T>,
    enc: Vec<Vec<GConvCache<T>>>,
    down_in: Vec<Tensor<T>>,
    mid: Vec<GConvCache<T>>,
    up_in: Vec<Tensor<T>>,
    fusion: Vec<FusionCache<T>>,
    dec: Vec<Vec<GConvCache<T>>>,
    head_in: Tensor<T>,
}

/// Depth-aware weight gain `(8 L)^(-1/4)` for `L` gConv blocks in total,
/// which keeps the residual stream's variance bounded as blocks are added.
pub fn init_gain(config: &ModelConfig) -> f64 {
    let blocks: usize = config.stages().iter().map(|s| s.blocks).sum();
    (8.0 * blocks as f64).powf(-0.25)
}

/// Builds a network and its parameters with deterministic initialization.
pub fn build_gunet<T: Float>(config: &ModelConfig, seed: u64) -> Result<(Gunet, ParamStore<T>)> {
    config.validate()?;
    let mut store = ParamStore::new(config.fingerprint());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder {
        store: &mut store,
        rng: &mut rng,
        init_gain: init_gain(config),
    };
    let widths = config.level_widths();
    let stages = config.stages();
    let h = config.half();
    let pad = config.padding;

    let stem = b.conv("stem", ConvSpec::dense(3, widths[0], 3, pad), true);
    let make_stage = |b: &mut Builder<'_, T, ChaCha8Rng>, name: &str, idx: usize| Stage {
        blocks: (0..stages[idx].blocks)
            .map(|j| GConvBlock::build(b, &format!("{name}.block{j}"), stages[idx].width, config))
            .collect(),
    };

    let mut encoders = Vec::with_capacity(h);
    let mut downs = Vec::with_capacity(h);
    for level in 0..h {
        encoders.push(make_stage(&mut b, &format!("enc{level}"), level));
        downs.push(b.conv(
            &format!("down{level}"),
            ConvSpec::pointwise(4 * widths[level], widths[level + 1]),
            true,
        ));
    }
    let bottleneck = make_stage(&mut b, "mid", h);
    let mut ups = vec![None; h];
    let mut fusions = vec![None; h];
    let mut decoders = vec![None; h];
    for level in (0..h).rev() {
        ups[level] = Some(b.conv(
            &format!("up{level}"),
            ConvSpec::pointwise(widths[level + 1], 4 * widths[level]),
            true,
        ));
        fusions[level] = Some(Fusion::build(
            &mut b,
            &format!("fusion{level}"),
            widths[level],
            config.fusion_kind,
        ));
        decoders[level] = Some(make_stage(&mut b, &format!("dec{level}"), 2 * h - level));
    }
    let head = b.conv_with_init("head", ConvSpec::dense(widths[0], 3, 3, pad), true, Init::Zeros);

    let net = Gunet {
        config: config.clone(),
        stem,
        encoders,
        downs,
        bottleneck,
        ups: ups.into_iter().map(Option::unwrap).collect(),
        fusions: fusions.into_iter().map(Option::unwrap).collect(),
        decoders: decoders.into_iter().map(Option::unwrap).collect(),
        head,
        norm_mode: NormMode::Train,
        ghost: GhostSize::Full,
    };
    Ok((net, store))
}

impl Gunet {
    pub fn half(&self) -> usize {
        self.encoders.len()
    }

    /// Context for a forward pass in this network's current norm mode.
    pub fn ctx<'a, T: Float>(&self, store: &'a ParamStore<T>) -> Ctx<'a, T> {
        Ctx::new(store, self.norm_mode).with_ghost(self.ghost)
    }

    /// `J = I + R(I)` for a batch of `[0, 1]` RGB images. Inputs are mapped to
    /// `[-1, 1]` for the body; the residual is mapped back by halving it.
    /// Spatial sizes are reflect-padded up to a multiple of `2^half` and the
    /// output is cropped back.
    pub fn forward<T: Float>(&self, ctx: &mut Ctx<T>, hazy: &Tensor<T>) -> Result<(Tensor<T>, GunetCache<T>)> {
        let s = hazy.shape();
        if s.c != 3 {
            return Err(Error::shape(format!("expected a 3-channel image batch, got {s}")));
        }
        if s.h == 0 || s.w == 0 || s.n == 0 {
            return Err(Error::shape(format!("empty input {s}")));
        }
        let m = self.config.size_multiple();
        let (ph, pw) = (s.h.div_ceil(m) * m, s.w.div_ceil(m) * m);
        let padded = hazy.pad_reflect_to(ph, pw);
        let normalized = padded.map(|v| v * T::c(2.0) - T::one());

        let (mut x, stem_in) = self.stem.forward(ctx, &normalized)?;
        let h = self.half();
        let mut skips = Vec::with_capacity(h);
        let mut enc = Vec::with_capacity(h);
        let mut down_in = Vec::with_capacity(h);
        for level in 0..h {
            let (y, c) = self.encoders[level].forward(ctx, x)?;
            enc.push(c);
            let unshuffled = ops::pixel_unshuffle(&y, 2)?;
            skips.push(y);
            let (d, din) = self.downs[level].forward(ctx, &unshuffled)?;
            down_in.push(din);
            x = d;
        }
        let (mut x, mid) = self.bottleneck.forward(ctx, x)?;
        let mut up_in = vec![Tensor::empty(); h];
        let mut fusion: Vec<Option<FusionCache<T>>> = vec![None; h];
        let mut dec: Vec<Vec<GConvCache<T>>> = vec![Vec::new(); h];
        for level in (0..h).rev() {
            let (u, uin) = self.ups[level].forward(ctx, &x)?;
            up_in[level] = uin;
            let upsampled = ops::pixel_shuffle(&u, 2)?;
            let (f, fc) = self.fusions[level].forward(ctx, &skips[level], &upsampled)?;
            fusion[level] = Some(fc);
            let (y, c) = self.decoders[level].forward(ctx, f)?;
            dec[level] = c;
            x = y;
        }
        let (residual, head_in) = self.head.forward(ctx, &x)?;
        let out = padded.zip_map(&residual, |i, r| i + T::c(0.5) * r)?;
        ctx.watch("output", &out);
        let out = out.crop(s.h, s.w);
        let cache = GunetCache {
            in_h: s.h,
            in_w: s.w,
            padded: (ph, pw),
            stem_in,
            enc,
            down_in,
            mid,
            up_in,
            fusion: fusion.into_iter().map(Option::unwrap).collect(),
            dec,
            head_in,
        };
        Ok((out, cache))
    }

    /// Accumulates parameter gradients for `grad_out = dL/dJ`.
    pub fn backward<T: Float>(&self, store: &mut ParamStore<T>, cache: &GunetCache<T>, grad_out: &Tensor<T>) -> Result<()> {
        let s = grad_out.shape();
        if (s.h, s.w) != (cache.in_h, cache.in_w) {
            return Err(Error::shape(format!("gradient {s} does not match the forward input")));
        }
        let (ph, pw) = cache.padded;
        // Cropping back-propagates as zero-extension.
        let mut gres = Tensor::zeros(crate::tensor::Shape::new(s.n, s.c, ph, pw));
        for n in 0..s.n {
            for c in 0..s.c {
                for y in 0..s.h {
                    for x in 0..s.w {
                        let i = gres.index(n, c, y, x);
                        gres.data_mut()[i] = grad_out.at(n, c, y, x) * T::c(0.5);
                    }
                }
            }
        }
        let mut g = self
            .head
            .backward(store, &cache.head_in, &gres, true)?
            .expect("input grad");
        let h = self.half();
        let mut gskips: Vec<Tensor<T>> = vec![Tensor::empty(); h];
        for level in 0..h {
            g = self.decoders[level].backward(store, &cache.dec[level], g)?;
            let (gskip, gmain) = self.fusions[level].backward(store, &cache.fusion[level], &g)?;
            gskips[level] = gskip;
            let gu = ops::pixel_unshuffle(&gmain, 2)?;
            g = self.ups[level]
                .backward(store, &cache.up_in[level], &gu, true)?
                .expect("input grad");
        }
        g = self.bottleneck.backward(store, &cache.mid, g)?;
        for level in (0..h).rev() {
            let gd = self.downs[level]
                .backward(store, &cache.down_in[level], &g, true)?
                .expect("input grad");
            let mut gy = ops::pixel_shuffle(&gd, 2)?;
            gy.add_assign(&gskips[level])?;
            g = self.encoders[level].backward(store, &cache.enc[level], gy)?;
        }
        self.stem.backward(store, &cache.stem_in, &g, false)?;
        Ok(())
    }

    /// Inference with running statistics. Takes the store immutably, so a
    /// finalized model can be shared across threads.
    pub fn dehaze<T: Float>(&self, store: &ParamStore<T>, hazy: &Tensor<T>) -> Result<Tensor<T>> {
        let mode = match self.norm_mode {
            NormMode::Train => NormMode::Eval,
            m => m,
        };
        let mut ctx = Ctx::new(store, mode);
        Ok(self.forward(&mut ctx, hazy)?.0)
    }

    /// Runs a forward pass that reports the first layer with non-finite
    /// output, if any.
    pub fn first_nonfinite_layer<T: Float>(&self, store: &ParamStore<T>, hazy: &Tensor<T>) -> Option<String> {
        let mut ctx = self.ctx(store);
        ctx.check_finite = true;
        let _ = self.forward(&mut ctx, hazy);
        ctx.first_nonfinite
    }

    pub fn blocks(&self) -> impl Iterator<Item = &GConvBlock> {
        self.encoders
            .iter()
            .chain(std::iter::once(&self.bottleneck))
            .chain(self.decoders.iter())
            .flat_map(|s| s.blocks.iter())
    }

    fn blocks_mut(&mut self) -> impl Iterator<Item = &mut GConvBlock> {
        self.encoders
            .iter_mut()
            .chain(std::iter::once(&mut self.bottleneck))
            .chain(self.decoders.iter_mut())
            .flat_map(|s| s.blocks.iter_mut())
    }

    /// Inference copy with every batch norm merged into the two pointwise
    /// convs that consume it. The returned store keeps the (now unused)
    /// norm entries so its layout and fingerprint are unchanged.
    pub fn fold_norms<T: Float>(&self, store: &ParamStore<T>) -> Result<(Gunet, ParamStore<T>)> {
        if self.norm_mode == NormMode::Train {
            return Err(Error::Contract(
                "set the network to eval or frozen mode before folding".into(),
            ));
        }
        let mut net = self.clone();
        let mut folded = store.clone();
        for block in net.blocks_mut() {
            let Some(norm) = block.norm.take() else {
                continue;
            };
            let crate::model::layers::NormLayerKind::Batch {
                running_mean,
                running_var,
            } = norm.kind
            else {
                return Err(Error::Contract(format!(
                    "{} is not a batch norm and cannot be folded",
                    norm.name
                )));
            };
            let (scale, shift) = bn_affine(
                store.value(norm.gamma),
                store.value(norm.beta),
                store.value(running_mean),
                store.value(running_var),
            );
            for conv in [&block.pw1, &block.pw2] {
                let bias_id = conv.bias.expect("block convs carry biases");
                let (w, b) = fold_affine_into_conv(
                    &scale,
                    &shift,
                    store.value(conv.weight),
                    Some(store.value(bias_id)),
                    &conv.spec,
                );
                folded.value_mut(conv.weight).copy_from_slice(&w);
                folded.value_mut(bias_id).copy_from_slice(&b);
            }
        }
        Ok((net, folded))
    }

    /// Sets every batch norm to `mode` (train, eval or frozen).
    pub fn set_norm_mode(&mut self, mode: NormMode) {
        self.norm_mode = mode;
    }
}

/// Cache access for tests that need block-level intermediates.
impl<T> GunetCache<T> {
    pub fn padded_size(&self) -> (usize, usize) {
        self.padded
    }
}
