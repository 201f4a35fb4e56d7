//! Central finite-difference checks of every backward pass, in `f64`.
//!
//! Each check contracts the output with a fixed random tensor `r`, so the
//! scalar objective `L = sum(r * y)` has `dL/dy = r`, and compares the
//! analytic gradient of every input (and parameter) with
//! `(L(v + eps) - L(v - eps)) / 2 eps`.
//!
//! Relative error of an element is `|a - n| / max(|a|, |n|, floor)` with
//! `floor = 1e-3 * max|grad|` over the tensor (and at least `1e-10`), so
//! elements whose true gradient is negligible against the tensor's scale are
//! judged by absolute error relative to that scale.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::model::config::{Attention, FusionKind, GateKind, ModelConfig, Nonlinearity, NormKind};
use crate::model::{build_gunet, Builder, Ctx, Fusion, GConvBlock, ParamKind, ParamStore};
use crate::ops::{self, Activation, BnConfig, ConvSpec, GhostSize, NormMode, Padding, SampleNorm};
use crate::tensor::{Shape, Tensor};

pub const OP_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;
pub const FD_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Op,
    Block,
    Model,
}

impl std::str::FromStr for Scope {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "op" => Ok(Self::Op),
            "block" => Ok(Self::Block),
            "model" => Ok(Self::Model),
            _ => Err(crate::Error::config(format!("unknown scope `{s}` (expected op, block or model)"))),
        }
    }
}

/// Result of checking one tensor's gradient.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub checks: Vec<GradCheck>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(GradCheck::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCheck> {
        self.checks.iter().filter(|c| !c.passed())
    }

    pub fn max_rel_err(&self) -> f64 {
        self.checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max)
    }

    fn extend(&mut self, other: GradReport) {
        self.checks.extend(other.checks);
    }
}

impl fmt::Display for GradCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<48} rel_err={:.3e} (n={}, tol={:.0e})",
            if self.passed() { "ok  " } else { "FAIL" },
            self.name,
            self.max_rel_err,
            self.checked,
            self.tolerance
        )
    }
}

fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-10);
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Up to `limit` evenly spread indices into `0..len`.
fn sample_indices(len: usize, limit: usize) -> Vec<usize> {
    if len <= limit {
        (0..len).collect()
    } else {
        (0..limit).map(|i| i * len / limit).collect()
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn contract(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Checks `backward` of a pure function of several tensors.
pub fn check_op(
    name: &str,
    labels: &[&str],
    mut inputs: Vec<Tensor<f64>>,
    forward: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    backward: impl Fn(&[Tensor<f64>], &Tensor<f64>) -> Result<Vec<Tensor<f64>>>,
) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let y = forward(&inputs)?;
    let r = random_tensor(&mut rng, y.shape(), 1.0);
    let grads = backward(&inputs, &r)?;
    let mut report = GradReport::default();
    for (k, g) in grads.iter().enumerate() {
        inputs[k].expect_same_shape(g)?;
        let mut numeric = Vec::with_capacity(g.numel());
        for i in 0..g.numel() {
            let orig = inputs[k].data()[i];
            inputs[k].data_mut()[i] = orig + FD_EPS;
            let lp = contract(&forward(&inputs)?, &r);
            inputs[k].data_mut()[i] = orig - FD_EPS;
            let lm = contract(&forward(&inputs)?, &r);
            inputs[k].data_mut()[i] = orig;
            numeric.push((lp - lm) / (2.0 * FD_EPS));
        }
        report.checks.push(GradCheck {
            name: format!("{name}/{}", labels.get(k).copied().unwrap_or("input")),
            checked: numeric.len(),
            max_rel_err: max_rel_err(g.data(), &numeric),
            tolerance: OP_TOLERANCE,
        });
    }
    Ok(report)
}

/// Checks parameter gradients of `loss`, whose analytic gradients are
/// accumulated into `store` by `grad`. Also checks the gradient with respect
/// to `input` when `grad` returns one.
fn check_store(
    name: &str,
    store: &mut ParamStore<f64>,
    input: &mut Tensor<f64>,
    per_tensor: usize,
    tolerance: f64,
    loss: impl Fn(&ParamStore<f64>, &Tensor<f64>) -> Result<f64>,
    grad: impl Fn(&mut ParamStore<f64>, &Tensor<f64>) -> Result<Option<Tensor<f64>>>,
) -> Result<GradReport> {
    store.zero_grads();
    let ginput = grad(store, input)?;
    let mut report = GradReport::default();
    if let Some(gx) = ginput {
        let idx = sample_indices(input.numel(), per_tensor);
        let mut numeric = Vec::with_capacity(idx.len());
        for &i in &idx {
            let orig = input.data()[i];
            input.data_mut()[i] = orig + FD_EPS;
            let lp = loss(store, input)?;
            input.data_mut()[i] = orig - FD_EPS;
            let lm = loss(store, input)?;
            input.data_mut()[i] = orig;
            numeric.push((lp - lm) / (2.0 * FD_EPS));
        }
        let analytic: Vec<f64> = idx.iter().map(|&i| gx.data()[i]).collect();
        report.checks.push(GradCheck {
            name: format!("{name}/input"),
            checked: idx.len(),
            max_rel_err: max_rel_err(&analytic, &numeric),
            tolerance,
        });
    }
    for e in 0..store.len() {
        let entry = &store.entries()[e];
        if !entry.kind.learnable() {
            continue;
        }
        let pname = entry.name.clone();
        let analytic_all = entry.tensor.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; entry.tensor.numel()]);
        let idx = sample_indices(entry.tensor.numel(), per_tensor);
        let mut numeric = Vec::with_capacity(idx.len());
        for &i in &idx {
            let orig = store.entries()[e].tensor.data()[i];
            store.entries_mut()[e].tensor.data_mut()[i] = orig + FD_EPS;
            let lp = loss(store, input)?;
            store.entries_mut()[e].tensor.data_mut()[i] = orig - FD_EPS;
            let lm = loss(store, input)?;
            store.entries_mut()[e].tensor.data_mut()[i] = orig;
            numeric.push((lp - lm) / (2.0 * FD_EPS));
        }
        let analytic: Vec<f64> = idx.iter().map(|&i| analytic_all[i]).collect();
        report.checks.push(GradCheck {
            name: format!("{name}/{pname}"),
            checked: idx.len(),
            max_rel_err: max_rel_err(&analytic, &numeric),
            tolerance,
        });
    }
    Ok(report)
}

/// Replaces every parameter with a well-conditioned random value: weights
/// `N(0, 1/fan_in)`, biases and betas `N(0, 0.1)`, gammas near 1, running
/// variances in `[0.5, 1.5]`. Needed because the zero-initialized head would
/// otherwise zero every upstream gradient.
pub fn randomize_params(store: &mut ParamStore<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for entry in store.entries_mut() {
        let s = entry.tensor.shape();
        let fan_in = (s.c * s.h * s.w).max(1) as f64;
        let name = entry.name.clone();
        let kind = entry.kind;
        for v in entry.tensor.data_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = match kind {
                ParamKind::Weight => z / fan_in.sqrt(),
                ParamKind::Bias => 0.1 * z,
                ParamKind::NormAffine if name.ends_with(".gamma") => 1.0 + 0.2 * z,
                ParamKind::NormAffine => 0.1 * z,
                ParamKind::RunningStat if name.ends_with(".running_var") => rng.random_range(0.5..1.5),
                ParamKind::RunningStat => 0.1 * z,
            };
        }
    }
}

fn op_checks() -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut report = GradReport::default();
    let x = random_tensor(&mut rng, Shape::new(2, 4, 5, 6), 1.0);

    let convs = [
        ("conv3x3_reflect", ConvSpec::dense(4, 3, 3, Padding::Reflect)),
        ("conv3x3_zero", ConvSpec::dense(4, 3, 3, Padding::Zero)),
        ("conv3x3_stride2", ConvSpec { stride: 2, ..ConvSpec::dense(4, 6, 3, Padding::Reflect) }),
        ("conv_grouped", ConvSpec { groups: 2, ..ConvSpec::dense(4, 6, 3, Padding::Reflect) }),
        ("dwconv5x5", ConvSpec::depthwise(4, 5, Padding::Reflect)),
        ("pwconv", ConvSpec::pointwise(4, 5)),
    ];
    for (name, spec) in convs {
        let w = random_tensor(&mut rng, spec.weight_shape(), 0.5);
        let b = random_tensor(&mut rng, Shape::new(spec.out_ch, 1, 1, 1), 0.5);
        report.extend(check_op(
            name,
            &["input", "weight", "bias"],
            vec![x.clone(), w, b],
            |t| ops::conv2d_raw(&t[0], t[1].data(), Some(t[2].data()), &spec),
            |t, g| {
                let cg = ops::conv2d_backward(&t[0], t[1].data(), &spec, g, true)?;
                Ok(vec![
                    cg.input.expect("input grad"),
                    Tensor::from_vec(spec.weight_shape(), cg.weight)?,
                    Tensor::from_vec(Shape::new(spec.out_ch, 1, 1, 1), cg.bias)?,
                ])
            },
        )?);
    }

    let gamma = Tensor::from_fn(Shape::new(4, 1, 1, 1), |n, _, _, _| 0.8 + 0.1 * n as f64);
    let beta = random_tensor(&mut rng, Shape::new(4, 1, 1, 1), 0.3);
    let rm: Vec<f64> = vec![0.1, -0.2, 0.05, 0.0];
    let rv: Vec<f64> = vec![0.9, 1.3, 0.7, 1.1];
    let bn_cases = [
        ("batch_norm_train", BnConfig::default()),
        ("batch_norm_ghost1", BnConfig { ghost: GhostSize::Size(1), ..BnConfig::default() }),
        ("batch_norm_eval", BnConfig { mode: NormMode::Eval, ..BnConfig::default() }),
    ];
    for (name, cfg) in bn_cases {
        let (rm, rv) = (rm.clone(), rv.clone());
        report.extend(check_op(
            name,
            &["input", "gamma", "beta"],
            vec![x.clone(), gamma.clone(), beta.clone()],
            |t| Ok(ops::batch_norm_forward(&t[0], t[1].data(), t[2].data(), &rm, &rv, &cfg)?.output),
            |t, g| {
                let out = ops::batch_norm_forward(&t[0], t[1].data(), t[2].data(), &rm, &rv, &cfg)?;
                let (gx, gg, gb) = ops::batch_norm_backward(&out.cache, t[1].data(), g)?;
                Ok(vec![gx, Tensor::from_vec(t[1].shape(), gg)?, Tensor::from_vec(t[2].shape(), gb)?])
            },
        )?);
    }
    for (name, kind) in [("layer_norm", SampleNorm::Layer), ("instance_norm", SampleNorm::Instance)] {
        report.extend(check_op(
            name,
            &["input", "gamma", "beta"],
            vec![x.clone(), gamma.clone(), beta.clone()],
            |t| Ok(ops::sample_norm_forward(kind, &t[0], t[1].data(), t[2].data())?.0),
            |t, g| {
                let (_, cache) = ops::sample_norm_forward(kind, &t[0], t[1].data(), t[2].data())?;
                let (gx, gg, gb) = ops::sample_norm_backward(kind, &cache, t[1].data(), g)?;
                Ok(vec![gx, Tensor::from_vec(t[1].shape(), gg)?, Tensor::from_vec(t[2].shape(), gb)?])
            },
        )?);
    }

    // Keep activation inputs away from kinks (0 for relu, +-3 for hard sigmoid).
    let act_in = x.map(|v| if v.abs() < 0.05 { v + 0.1 } else { v.clamp(-2.5, 2.5) });
    for act in [
        Activation::Sigmoid,
        Activation::HardSigmoid,
        Activation::Tanh,
        Activation::Relu,
        Activation::Gelu,
    ] {
        report.extend(check_op(
            &format!("{act:?}").to_lowercase(),
            &["input"],
            vec![act_in.clone()],
            |t| Ok(act.forward(&t[0])),
            |t, g| Ok(vec![act.backward(&t[0], g)]),
        )?);
    }

    report.extend(check_op(
        "global_avg_pool",
        &["input"],
        vec![x.clone()],
        |t| Ok(ops::global_avg_pool(&t[0])),
        |t, g| Ok(vec![ops::global_avg_pool_backward(g, t[0].shape())]),
    )?);
    let logits = random_tensor(&mut rng, Shape::new(2, 6, 1, 1), 1.0);
    report.extend(check_op(
        "softmax_over_branches",
        &["logits"],
        vec![logits],
        |t| ops::softmax_over_branches(&t[0], 2),
        |t, g| Ok(vec![ops::softmax_over_branches_backward(&ops::softmax_over_branches(&t[0], 2)?, g, 2)?]),
    )?);
    let even = random_tensor(&mut rng, Shape::new(2, 2, 4, 6), 1.0);
    report.extend(check_op(
        "pixel_unshuffle",
        &["input"],
        vec![even.clone()],
        |t| ops::pixel_unshuffle(&t[0], 2),
        |_, g| Ok(vec![ops::pixel_shuffle(g, 2)?]),
    )?);
    report.extend(check_op(
        "pixel_shuffle",
        &["input"],
        vec![ops::pixel_unshuffle(&even, 2)?],
        |t| ops::pixel_shuffle(&t[0], 2),
        |_, g| Ok(vec![ops::pixel_unshuffle(g, 2)?]),
    )?);
    let scale = random_tensor(&mut rng, Shape::new(2, 4, 1, 1), 1.0);
    report.extend(check_op(
        "channel_scale",
        &["input", "scale"],
        vec![x.clone(), scale],
        |t| ops::channel_scale(&t[0], &t[1]),
        |t, g| {
            let (gx, gs) = ops::channel_scale_backward(&t[0], &t[1], g);
            Ok(vec![gx, gs])
        },
    )?);
    let pooled = random_tensor(&mut rng, Shape::new(2, 7, 1, 1), 1.0);
    let kernel = random_tensor(&mut rng, Shape::new(1, 1, 1, 3), 1.0);
    report.extend(check_op(
        "channel_conv1d",
        &["input", "kernel"],
        vec![pooled, kernel],
        |t| ops::channel_conv1d(&t[0], t[1].data()),
        |t, g| {
            let (gx, gk) = ops::channel_conv1d_backward(&t[0], t[1].data(), g);
            Ok(vec![gx, Tensor::from_vec(t[1].shape(), gk)?])
        },
    )?);
    report.extend(check_op(
        "reflect_pad",
        &["input"],
        vec![x.clone()],
        |t| Ok(t[0].pad_reflect_to(8, 8)),
        |t, g| Ok(vec![Tensor::unpad_reflect_grad(g, t[0].shape().h, t[0].shape().w)]),
    )?);
    // L1 is smooth away from ties; the target is offset so none occur.
    let target = x.map(|v| v + 0.3 * v.signum() + 0.01);
    let l1_target = target.clone();
    report.extend(check_op(
        "l1_loss",
        &["pred"],
        vec![x.clone()],
        move |t| Ok(Tensor::full(Shape::new(1, 1, 1, 1), ops::l1_loss(&t[0], &l1_target)?)),
        move |t, g| Ok(vec![ops::l1_loss_backward(&t[0], &target)?.scale(g.data()[0])]),
    )?);
    Ok(report)
}

fn block_configs() -> Vec<(String, ModelConfig)> {
    let base = ModelConfig::micro(8, 1);
    let mut out = vec![("gconv".to_string(), base.clone())];
    let variants: [(&str, fn(&mut ModelConfig)); 8] = [
        ("gconv_layer_norm", |c| c.norm_kind = NormKind::Layer),
        ("gconv_instance_norm", |c| c.norm_kind = NormKind::Instance),
        ("gconv_tanh_gate", |c| c.gate_kind = GateKind::Tanh),
        ("gconv_hard_sigmoid_gate", |c| c.gate_kind = GateKind::HardSigmoid),
        ("gconv_relu_sum", |c| c.nonlin_ablation = Nonlinearity::ReluSum),
        ("gconv_gelu_sum", |c| c.nonlin_ablation = Nonlinearity::GeluSum),
        ("gconv_se", |c| c.extra_attention = Attention::Se),
        ("gconv_eca", |c| c.extra_attention = Attention::Eca),
    ];
    for (name, f) in variants {
        let mut c = base.clone();
        f(&mut c);
        out.push((name.to_string(), c));
    }
    out
}

fn block_checks() -> Result<GradReport> {
    let mut report = GradReport::default();
    let c = 8;
    for (i, (name, cfg)) in block_configs().into_iter().enumerate() {
        let mut store = ParamStore::<f64>::new(cfg.fingerprint());
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let block = GConvBlock::build(
            &mut Builder {
                store: &mut store,
                rng: &mut rng,
                init_gain: 1.0,
            },
            &name,
            c,
            &cfg,
        );
        randomize_params(&mut store, 100 + i as u64);
        let mut x = random_tensor(&mut rng, Shape::new(2, c, 6, 6), 1.0);
        let r = random_tensor(&mut rng, x.shape(), 1.0);
        let rr = r.clone();
        let b2 = block.clone();
        report.extend(check_store(
            &name,
            &mut store,
            &mut x,
            usize::MAX,
            OP_TOLERANCE,
            move |s, x| {
                let mut ctx = Ctx::new(s, NormMode::Train);
                Ok(contract(&b2.forward(&mut ctx, x)?.0, &rr))
            },
            |s, x| {
                let (_, cache) = {
                    let mut ctx = Ctx::new(s, NormMode::Train).recording();
                    block.forward(&mut ctx, x)?
                };
                Ok(Some(block.backward(s, &cache, &r)?))
            },
        )?);
    }

    for (i, kind) in [FusionKind::Sk, FusionKind::Concat, FusionKind::Sum].into_iter().enumerate() {
        let name = format!("fusion_{kind:?}").to_lowercase();
        let mut store = ParamStore::<f64>::new([0; 32]);
        let mut rng = ChaCha8Rng::seed_from_u64(50 + i as u64);
        let fusion = Fusion::build(
            &mut Builder {
                store: &mut store,
                rng: &mut rng,
                init_gain: 1.0,
            },
            &name,
            c,
            kind,
        );
        randomize_params(&mut store, 200 + i as u64);
        // Both branches stacked on the batch axis so one tensor carries them.
        let mut pair = random_tensor(&mut rng, Shape::new(4, c, 5, 5), 1.0);
        let r = random_tensor(&mut rng, Shape::new(2, c, 5, 5), 1.0);
        let split = |t: &Tensor<f64>| (t.select_batch(&[0, 1]), t.select_batch(&[2, 3]));
        let (f2, rr) = (fusion.clone(), r.clone());
        report.extend(check_store(
            &name,
            &mut store,
            &mut pair,
            usize::MAX,
            OP_TOLERANCE,
            move |s, t| {
                let (a, b) = split(t);
                let mut ctx = Ctx::new(s, NormMode::Train);
                Ok(contract(&f2.forward(&mut ctx, &a, &b)?.0, &rr))
            },
            |s, t| {
                let (a, b) = split(t);
                let (_, cache) = {
                    let mut ctx = Ctx::new(s, NormMode::Train).recording();
                    fusion.forward(&mut ctx, &a, &b)?
                };
                let (ga, gb) = fusion.backward(s, &cache, &r)?;
                Ok(Some(Tensor::stack(&[&ga.select_batch(&[0]), &ga.select_batch(&[1]), &gb.select_batch(&[0]), &gb.select_batch(&[1])])?))
            },
        )?);
    }
    Ok(report)
}

/// End-to-end check of a micro network (N=4, M=1, 5 stages) on a 16x16
/// batch of two, with train-mode batch statistics. `per_tensor` bounds the
/// number of elements probed in each parameter tensor.
pub fn model_check(config: &ModelConfig, resolution: usize, per_tensor: usize) -> Result<GradReport> {
    let (net, mut store) = build_gunet::<f64>(config, 1)?;
    randomize_params(&mut store, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut x = Tensor::from_fn(Shape::new(2, 3, resolution, resolution), |_, _, _, _| rng.random_range(0.0..1.0));
    let r = random_tensor(&mut rng, x.shape(), 1.0);
    check_store(
        "model",
        &mut store,
        &mut x,
        per_tensor,
        MODEL_TOLERANCE,
        |s, x| {
            let mut ctx = Ctx::new(s, NormMode::Train);
            Ok(contract(&net.forward(&mut ctx, x)?.0, &r))
        },
        |s, x| {
            let (_, cache) = {
                let mut ctx = Ctx::new(s, NormMode::Train).recording();
                net.forward(&mut ctx, x)?
            };
            net.backward(s, &cache, &r)?;
            Ok(None)
        },
    )
}

pub fn run(scope: Scope) -> Result<GradReport> {
    match scope {
        Scope::Op => op_checks(),
        Scope::Block => block_checks(),
        Scope::Model => model_check(&ModelConfig::micro(4, 1), 16, 12),
    }
}
