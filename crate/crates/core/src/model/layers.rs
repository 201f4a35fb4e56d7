//! Parameterized layers that read their weights from a [`ParamStore`].
//!
//! Forward passes take the store immutably; batch-norm statistic updates are
//! collected in the [`Ctx`] and applied by the caller afterwards. Backward
//! passes accumulate into the store's gradient buffers.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::config::NormKind;
use crate::model::params::{Init, ParamId, ParamKind, ParamStore};
use crate::ops::{self, BnConfig, ConvSpec, GhostSize, NormCache, NormMode, SampleNorm};
use crate::tensor::{Float, Shape, Tensor};

/// Per-forward-pass state.
pub struct Ctx<'a, T> {
    pub store: &'a ParamStore<T>,
    pub mode: NormMode,
    pub ghost: GhostSize,
    /// Keep activations for a backward pass.
    pub record: bool,
    /// Pending running-statistic writes from train-mode batch norms.
    pub stat_updates: Vec<(ParamId, Vec<T>)>,
    /// Name the first layer whose output is not finite.
    pub check_finite: bool,
    pub first_nonfinite: Option<String>,
}

impl<'a, T: Float> Ctx<'a, T> {
    pub fn new(store: &'a ParamStore<T>, mode: NormMode) -> Self {
        Self {
            store,
            mode,
            ghost: GhostSize::Full,
            record: false,
            stat_updates: Vec::new(),
            check_finite: false,
            first_nonfinite: None,
        }
    }

    pub fn recording(mut self) -> Self {
        self.record = true;
        self
    }

    pub fn with_ghost(mut self, ghost: GhostSize) -> Self {
        self.ghost = ghost;
        self
    }

    #[inline]
    pub(crate) fn keep(&self, t: &Tensor<T>) -> Tensor<T> {
        if self.record {
            t.clone()
        } else {
            Tensor::empty()
        }
    }

    pub(crate) fn watch(&mut self, name: &str, t: &Tensor<T>) {
        if self.check_finite && self.first_nonfinite.is_none() && !t.all_finite() {
            self.first_nonfinite = Some(name.to_string());
        }
    }

    /// Ends the pass, releasing the store borrow; apply the result with
    /// [`ParamStore::apply_stat_updates`].
    pub fn into_stat_updates(self) -> Vec<(ParamId, Vec<T>)> {
        self.stat_updates
    }
}

/// Adds parameters to a store in construction order.
pub struct Builder<'s, T, R> {
    pub store: &'s mut ParamStore<T>,
    pub rng: &'s mut R,
    /// Scale on the fan-based weight std (see [`Builder::conv`]).
    pub init_gain: f64,
}

impl<T: Float, R: Rng> Builder<'_, T, R> {
    /// Conv with truncated-normal weights, `std = gain * sqrt(2 / (fan_in + fan_out))`.
    pub fn conv(&mut self, name: &str, spec: ConvSpec, bias: bool) -> ConvLayer {
        let kk = spec.kernel * spec.kernel;
        let fan_in = spec.in_ch / spec.groups * kk;
        let fan_out = spec.out_ch * kk;
        let std = self.fan_std(fan_in, fan_out);
        self.conv_with_init(name, spec, bias, Init::TruncNormal(std))
    }

    pub fn fan_std(&self, fan_in: usize, fan_out: usize) -> f64 {
        self.init_gain * (2.0 / (fan_in + fan_out) as f64).sqrt()
    }

    pub fn conv_with_init(&mut self, name: &str, spec: ConvSpec, bias: bool, init: Init) -> ConvLayer {
        let weight = self.store.add(
            format!("{name}.weight"),
            ParamKind::Weight,
            spec.weight_shape(),
            init,
            self.rng,
        );
        let bias = bias.then(|| {
            self.store.add(
                format!("{name}.bias"),
                ParamKind::Bias,
                Shape::new(spec.out_ch, 1, 1, 1),
                Init::Zeros,
                self.rng,
            )
        });
        ConvLayer {
            name: name.to_string(),
            spec,
            weight,
            bias,
        }
    }

    pub fn norm(&mut self, name: &str, kind: NormKind, channels: usize) -> NormLayer {
        let shape = Shape::new(channels, 1, 1, 1);
        let mut add = |suffix: &str, kind: ParamKind, init: Init| {
            self.store
                .add(format!("{name}.{suffix}"), kind, shape, init, self.rng)
        };
        let gamma = add("gamma", ParamKind::NormAffine, Init::Ones);
        let beta = add("beta", ParamKind::NormAffine, Init::Zeros);
        let kind = match kind {
            NormKind::Batch => NormLayerKind::Batch {
                running_mean: add("running_mean", ParamKind::RunningStat, Init::Zeros),
                running_var: add("running_var", ParamKind::RunningStat, Init::Ones),
            },
            NormKind::Layer => NormLayerKind::Sample(SampleNorm::Layer),
            NormKind::Instance => NormLayerKind::Sample(SampleNorm::Instance),
        };
        NormLayer {
            name: name.to_string(),
            channels,
            gamma,
            beta,
            kind,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub name: String,
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl ConvLayer {
    /// Returns the output and the cached input.
    pub fn forward<T: Float>(&self, ctx: &mut Ctx<T>, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let store = ctx.store;
        let y = ops::conv2d_raw(
            x,
            store.value(self.weight),
            self.bias.map(|b| store.value(b)),
            &self.spec,
        )
        .map_err(|e| Error::config(format!("{}: {e}", self.name)))?;
        ctx.watch(&self.name, &y);
        Ok((y, ctx.keep(x)))
    }

    pub fn backward<T: Float>(
        &self,
        store: &mut ParamStore<T>,
        input: &Tensor<T>,
        grad: &Tensor<T>,
        need_input: bool,
    ) -> Result<Option<Tensor<T>>> {
        let g = ops::conv2d_backward(input, store.value(self.weight), &self.spec, grad, need_input)?;
        store.accumulate_grad(self.weight, &g.weight);
        if let Some(b) = self.bias {
            store.accumulate_grad(b, &g.bias);
        }
        Ok(g.input)
    }

    pub fn param_count(&self) -> usize {
        self.spec.weight_len() + if self.bias.is_some() { self.spec.out_ch } else { 0 }
    }
}

#[derive(Clone, Debug)]
pub enum NormLayerKind {
    Batch {
        running_mean: ParamId,
        running_var: ParamId,
    },
    Sample(SampleNorm),
}

#[derive(Clone, Debug)]
pub struct NormLayer {
    pub name: String,
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub kind: NormLayerKind,
}

impl NormLayer {
    pub fn forward<T: Float>(&self, ctx: &mut Ctx<T>, x: &Tensor<T>) -> Result<(Tensor<T>, NormCache<T>)> {
        let store = ctx.store;
        let (gamma, beta) = (store.value(self.gamma), store.value(self.beta));
        let (y, mut cache) = match self.kind {
            NormLayerKind::Batch {
                running_mean,
                running_var,
            } => {
                let cfg = BnConfig {
                    mode: ctx.mode,
                    ghost: ctx.ghost,
                    ..BnConfig::default()
                };
                let out = ops::batch_norm_forward(
                    x,
                    gamma,
                    beta,
                    store.value(running_mean),
                    store.value(running_var),
                    &cfg,
                )
                .map_err(|e| Error::config(format!("{}: {e}", self.name)))?;
                if let Some((m, v)) = out.running {
                    ctx.stat_updates.push((running_mean, m));
                    ctx.stat_updates.push((running_var, v));
                }
                (out.output, out.cache)
            }
            NormLayerKind::Sample(kind) => ops::sample_norm_forward(kind, x, gamma, beta)?,
        };
        ctx.watch(&self.name, &y);
        if !ctx.record {
            cache.xhat = Tensor::empty();
        }
        Ok((y, cache))
    }

    pub fn backward<T: Float>(
        &self,
        store: &mut ParamStore<T>,
        cache: &NormCache<T>,
        grad: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let gamma = store.value(self.gamma);
        let (gx, dg, db) = match self.kind {
            NormLayerKind::Batch { .. } => ops::batch_norm_backward(cache, gamma, grad)?,
            NormLayerKind::Sample(kind) => ops::sample_norm_backward(kind, cache, gamma, grad)?,
        };
        store.accumulate_grad(self.gamma, &dg);
        store.accumulate_grad(self.beta, &db);
        Ok(gx)
    }

    pub fn is_batch(&self) -> bool {
        matches!(self.kind, NormLayerKind::Batch { .. })
    }
}
