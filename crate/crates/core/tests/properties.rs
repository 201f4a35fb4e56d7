//! Randomized invariants across tensor ops, the network, the cost model,
//! haze simulation, metrics and training.

use gunet::cost::{count_macs, count_params};
use gunet::haze::{invert_haze, psnr, ssim, synthesize_haze, HazeParams};
use gunet::model::{build_gunet, Builder, Ctx, Fusion, FusionKind, GConvBlock, ModelConfig, ParamStore};
use gunet::ops::{
    self, batch_norm_forward, conv2d, fold_norm_into_conv, BnConfig, ConvParams, ConvSpec, GhostSize, NormMode,
    NormState, Padding,
};
use gunet::train::{lr_at, train_step};
use gunet::{Shape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(shape: Shape, seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(lo..hi))
}

fn padding() -> impl Strategy<Value = Padding> {
    prop_oneof![Just(Padding::Zero), Just(Padding::Reflect)]
}

/// Small conv geometries: dense or depthwise, k in {1, 3, 5}, stride 1 or 2.
fn conv_spec() -> impl Strategy<Value = ConvSpec> {
    (1usize..4, 1usize..4, prop_oneof![Just(1usize), Just(3), Just(5)], 1usize..3, any::<bool>(), padding()).prop_map(
        |(cin, cout, k, stride, depthwise, padding)| {
            let mut spec = if depthwise {
                ConvSpec::depthwise(cin, k, padding)
            } else {
                ConvSpec::dense(cin, cout, k, padding)
            };
            spec.stride = stride;
            spec
        },
    )
}

fn random_conv(spec: ConvSpec, seed: u64, bias: bool) -> ConvParams<f64> {
    let w = random_tensor(spec.weight_shape(), seed, -1.0, 1.0);
    let b = bias.then(|| random_tensor(Shape::new(spec.out_ch, 1, 1, 1), seed + 1, -1.0, 1.0).into_data());
    ConvParams::new(spec, w, b).unwrap()
}

fn builder_store() -> (ParamStore<f64>, ChaCha8Rng) {
    (ParamStore::new([0; 32]), ChaCha8Rng::seed_from_u64(0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_is_linear(spec in conv_spec(), seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0, hw in 4usize..8) {
        let params = random_conv(spec, seed, false);
        let shape = Shape::new(2, spec.in_ch, hw, hw + 1);
        let x = random_tensor(shape, seed ^ 1, -1.0, 1.0);
        let y = random_tensor(shape, seed ^ 2, -1.0, 1.0);
        let mix = x.zip_map(&y, |u, v| a * u + b * v).unwrap();
        let lhs = conv2d(&mix, &params).unwrap();
        let rhs = conv2d(&x, &params).unwrap().zip_map(&conv2d(&y, &params).unwrap(), |u, v| a * u + b * v).unwrap();
        let scale = rhs.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(lhs.max_abs_diff(&rhs) / scale < 1e-6);
    }

    #[test]
    fn batch_norm_train_output_is_standardized_per_ghost_group(
        seed in any::<u64>(), c in 1usize..4, ghost in prop_oneof![Just(1usize), Just(2), Just(4)], shift in -3.0f64..3.0,
    ) {
        let x = random_tensor(Shape::new(4, c, 5, 6), seed, shift - 2.0, shift + 2.0);
        let ones = vec![1.0; c];
        let zeros = vec![0.0; c];
        let cfg = BnConfig { ghost: GhostSize::Size(ghost), ..BnConfig::default() };
        let out = batch_norm_forward(&x, &ones, &zeros, &zeros, &ones, &cfg).unwrap().output;
        for g in 0..4 / ghost {
            for ch in 0..c {
                let vals: Vec<f64> = (g * ghost..(g + 1) * ghost).flat_map(|n| out.plane(n, ch).to_vec()).collect();
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                let v = vals.iter().map(|u| (u - m).powi(2)).sum::<f64>() / vals.len() as f64;
                prop_assert!(m.abs() < 1e-5);
                // eps = 1e-5 in the denominator shifts the variance slightly below 1.
                prop_assert!((v - 1.0).abs() < 1e-4, "var {v}");
            }
        }
    }

    #[test]
    fn ghost_size_equal_to_batch_is_plain_batch_norm(seed in any::<u64>(), n in 1usize..6, c in 1usize..4) {
        let x = random_tensor(Shape::new(n, c, 4, 3), seed, -2.0, 2.0);
        let gamma = random_tensor(Shape::new(c, 1, 1, 1), seed ^ 3, 0.5, 1.5).into_data();
        let beta = random_tensor(Shape::new(c, 1, 1, 1), seed ^ 4, -0.5, 0.5).into_data();
        let (rm, rv) = (vec![0.1; c], vec![0.9; c]);
        let full = batch_norm_forward(&x, &gamma, &beta, &rm, &rv, &BnConfig::default()).unwrap();
        let cfg = BnConfig { ghost: GhostSize::Size(n), ..BnConfig::default() };
        let ghost = batch_norm_forward(&x, &gamma, &beta, &rm, &rv, &cfg).unwrap();
        prop_assert_eq!(full.output.data(), ghost.output.data());
        prop_assert_eq!(full.running, ghost.running);
    }

    #[test]
    fn folded_norm_matches_norm_then_conv(seed in any::<u64>(), cin in 1usize..5, cout in 1usize..5, k in prop_oneof![Just(1usize), Just(3)]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = NormState::<f32>::new(cin);
        for c in 0..cin {
            state.gamma[c] = rng.random_range(0.5..1.5);
            state.beta[c] = rng.random_range(-0.5..0.5);
            state.running_mean[c] = rng.random_range(-0.5..0.5);
            state.running_var[c] = rng.random_range(0.5..1.5);
        }
        state.mode = NormMode::Eval;
        let spec = ConvSpec::dense(cin, cout, k, Padding::Reflect);
        let conv = random_conv(spec, seed, true);
        let conv = ConvParams::new(spec, conv.weight.cast::<f32>(), conv.bias.map(|b| b.iter().map(|&v| v as f32).collect())).unwrap();
        let folded = fold_norm_into_conv(&state, &conv).unwrap();
        let x = random_tensor(Shape::new(2, cin, 6, 5), seed ^ 9, -2.0, 2.0).cast::<f32>();
        let two_step = conv2d(&ops::batch_norm(&x, &mut state.clone()).unwrap(), &conv).unwrap();
        let one_step = conv2d(&x, &folded).unwrap();
        prop_assert!(one_step.max_abs_diff(&two_step) < 1e-5);
    }

    #[test]
    fn pixel_shuffle_inverts_unshuffle(seed in any::<u64>(), c in 1usize..4, h in 1usize..5, w in 1usize..5, r in 1usize..4) {
        let x = random_tensor(Shape::new(2, c, h * r, w * r), seed, -1.0, 1.0);
        let back = ops::pixel_shuffle(&ops::pixel_unshuffle(&x, r).unwrap(), r).unwrap();
        prop_assert_eq!(back.data(), x.data());
    }

    #[test]
    fn branch_softmax_sums_to_one(seed in any::<u64>(), c in 1usize..6, branches in 2usize..4, scale in 0.1f64..50.0) {
        let logits = random_tensor(Shape::new(3, branches * c, 1, 1), seed, -scale, scale);
        let w = ops::softmax_over_branches(&logits, branches).unwrap();
        for n in 0..3 {
            for ch in 0..c {
                let s: f64 = (0..branches).map(|b| w.at(n, b * c + ch, 0, 0)).sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn gconv_with_zeroed_output_projection_is_identity(width in 1usize..24, seed in any::<u64>()) {
        let (mut store, mut rng) = builder_store();
        let cfg = ModelConfig::micro(8, 1);
        let block = {
            let mut b = Builder { store: &mut store, rng: &mut rng, init_gain: 1.0 };
            GConvBlock::build(&mut b, "blk", width, &cfg)
        };
        for e in store.entries_mut() {
            if e.name.starts_with("blk.pw3.") {
                e.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let x = random_tensor(Shape::new(2, width, 5, 4), seed, -1.0, 1.0);
        let mut ctx = Ctx::new(&store, NormMode::Train);
        let (y, _) = block.forward(&mut ctx, &x).unwrap();
        prop_assert_eq!(y.data(), x.data());
    }

    #[test]
    fn sk_weights_are_convex_and_shift_invariant(c in 1usize..16, seed in any::<u64>(), shift in -5.0f64..5.0) {
        let (mut store, mut rng) = builder_store();
        let fusion = {
            let mut b = Builder { store: &mut store, rng: &mut rng, init_gain: 4.0 };
            Fusion::build(&mut b, "f", c, FusionKind::Sk)
        };
        let skip = random_tensor(Shape::new(2, c, 4, 4), seed, -1.0, 1.0);
        let main = random_tensor(Shape::new(2, c, 4, 4), seed ^ 5, -1.0, 1.0);
        let before = fusion.weights(&mut Ctx::new(&store, NormMode::Train), &skip, &main).unwrap().unwrap();
        for (a1, a2) in before.skip.data().iter().zip(before.main.data()) {
            prop_assert!(*a1 > 0.0 && *a1 < 1.0 && *a2 > 0.0 && *a2 < 1.0);
            prop_assert!((a1 + a2 - 1.0).abs() < 1e-6);
        }
        let id = store.id("f.mlp_expand.bias").unwrap();
        store.value_mut(id).iter_mut().for_each(|v| *v += shift);
        let after = fusion.weights(&mut Ctx::new(&store, NormMode::Train), &skip, &main).unwrap().unwrap();
        prop_assert!(after.skip.max_abs_diff(&before.skip) < 1e-6);
        prop_assert!(after.main.max_abs_diff(&before.main) < 1e-6);
    }
}

fn ablation() -> impl Strategy<Value = Vec<String>> {
    let one = prop_oneof![
        prop_oneof![Just("sk"), Just("concat"), Just("sum")].prop_map(|v| format!("fusion={v}")),
        prop_oneof![Just("batch"), Just("layer"), Just("instance")].prop_map(|v| format!("norm={v}")),
        prop_oneof![Just("sigmoid"), Just("hard_sigmoid"), Just("tanh")].prop_map(|v| format!("gate={v}")),
        prop_oneof![Just("gating"), Just("relu"), Just("gelu")].prop_map(|v| format!("nonlin={v}")),
        prop_oneof![Just("none"), Just("se"), Just("eca")].prop_map(|v| format!("attention={v}")),
        prop_oneof![Just(3usize), Just(5), Just(7)].prop_map(|v| format!("k={v}")),
        prop_oneof![Just(3usize), Just(5), Just(7)].prop_map(|v| format!("stages={v}")),
        prop_oneof![Just("1.0"), Just("sqrt2"), Just("0.5")].prop_map(|v| format!("width={v}")),
        (1usize..3).prop_map(|v| format!("m={v}")),
        (4usize..12).prop_map(|v| format!("n={v}")),
    ];
    prop::collection::vec(one, 0..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cost_model_param_count_matches_built_store(ablations in ablation()) {
        let mut cfg = ModelConfig::micro(8, 1);
        for a in &ablations {
            cfg.apply_ablation(a).unwrap();
        }
        let (_, store) = build_gunet::<f32>(&cfg, 0).unwrap();
        prop_assert_eq!(count_params(&cfg).unwrap(), store.learnable_count() as u64);
    }

    #[test]
    fn macs_scale_quadratically(ablations in ablation(), h in 4usize..16, w in 4usize..16) {
        let mut cfg = ModelConfig::preset("T").unwrap();
        for a in &ablations {
            cfg.apply_ablation(a).unwrap();
        }
        let m = cfg.size_multiple() * 4;
        let small = count_macs(&cfg, (h * m, w * m)).unwrap() as f64;
        let big = count_macs(&cfg, (2 * h * m, 2 * w * m)).unwrap() as f64;
        let ratio = big / small;
        prop_assert!((3.9..=4.1).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn haze_is_a_convex_combination_and_inverts(seed in any::<u64>(), beta in 0.0f64..2.0, a in 0.7f64..1.0) {
        let (h, w) = (6, 7);
        let clean = random_tensor(Shape::new(1, 3, h, w), seed, 0.0, 1.0);
        let depth = random_tensor(Shape::new(1, 1, h, w), seed ^ 7, 0.0, 3.0).into_data();
        let params = HazeParams { atmosphere: [a; 3], beta, depth, height: h, width: w };
        let hazy = synthesize_haze(&clean, &params).unwrap();
        for (&i, &j) in hazy.data().iter().zip(clean.data()) {
            prop_assert!(i >= j.min(a) - 1e-12 && i <= j.max(a) + 1e-12);
        }
        let t = params.transmission();
        let back = invert_haze(&hazy, &params, 1e-9).unwrap();
        for (idx, (&b, &j)) in back.data().iter().zip(clean.data()).enumerate() {
            // Inversion amplifies rounding by 1/t; only well-conditioned pixels are compared.
            if t[idx % (h * w)] > 0.05 {
                prop_assert!((b - j).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn metrics_are_symmetric_and_psnr_ignores_pixel_order(seed in any::<u64>(), noise in 0.01f64..0.3) {
        let a = random_tensor(Shape::new(1, 3, 12, 13), seed, 0.0, 1.0);
        let b = a.zip_map(&random_tensor(a.shape(), seed ^ 1, -noise, noise), |u, v| (u + v).clamp(0.0, 1.0)).unwrap();
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        let (s_ab, s_ba) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        prop_assert!((s_ab - s_ba).abs() < 1e-12 && s_ab <= 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let mut perm: Vec<usize> = (0..a.numel()).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let shuffle = |t: &Tensor<f64>| Tensor::from_vec(t.shape(), perm.iter().map(|&i| t.data()[i]).collect()).unwrap();
        prop_assert!((psnr(&shuffle(&a), &shuffle(&b)).unwrap() - psnr(&a, &b).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn lr_schedule_is_continuous_and_then_non_increasing(total in 10usize..5000, warm_frac in 0.0f64..0.5, hi in 1e-4f64..1e-2, ratio in 0.0f64..1.0) {
        let warm = (total as f64 * warm_frac) as usize;
        let lo = hi * ratio;
        if warm > 0 {
            let before = lr_at(warm - 1, total, warm, hi, lo);
            prop_assert!((hi - before) <= hi / warm as f64 + 1e-15);
        }
        prop_assert!((lr_at(warm, total, warm, hi, lo) - hi).abs() <= 1e-12 * hi);
        let mut prev = f64::INFINITY;
        for step in warm..=total {
            let lr = lr_at(step, total, warm, hi, lo);
            prop_assert!(lr <= prev && lr >= lo - 1e-15);
            prev = lr;
        }
    }
}

#[test]
fn preset_and_kernel_params_are_monotone() {
    let p = |name: &str| count_params(&ModelConfig::preset(name).unwrap()).unwrap();
    assert!(p("T") < p("S") && p("S") < p("B") && p("B") < p("D"));
    let k = |k: usize| {
        let mut c = ModelConfig::preset("T").unwrap();
        c.dw_kernel = k;
        count_params(&c).unwrap()
    };
    assert!(k(3) < k(5) && k(5) < k(7));
}

fn toy_batch(seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let hazy = random_tensor(Shape::new(8, 3, 16, 16), seed, 0.3, 1.0);
    let clean = random_tensor(Shape::new(8, 3, 16, 16), seed ^ 1, 0.0, 1.0);
    (hazy, clean)
}

fn step_with_ghost(ghost: GhostSize) -> (f64, ParamStore<f64>) {
    let (mut net, mut store) = build_gunet::<f64>(&ModelConfig::micro(4, 1), 3).unwrap();
    gunet::gradcheck::randomize_params(&mut store, 3);
    net.ghost = ghost;
    net.set_norm_mode(NormMode::Train);
    let (hazy, clean) = toy_batch(11);
    let loss = train_step(&net, &mut store, &hazy, &clean).unwrap();
    (loss, store)
}

#[test]
fn ghost_size_eight_equals_full_and_one_differs() {
    let (l_full, s_full) = step_with_ghost(GhostSize::Full);
    let (l_8, s_8) = step_with_ghost(GhostSize::Size(8));
    let (l_1, _) = step_with_ghost(GhostSize::Size(1));
    assert_eq!(l_full, l_8);
    for (a, b) in s_full.entries().iter().zip(s_8.entries()) {
        assert_eq!(a.tensor.data(), b.tensor.data(), "{}", a.name);
        assert_eq!(a.tensor.grad(), b.tensor.grad(), "{}", a.name);
    }
    assert_ne!(l_full, l_1);
}

#[test]
fn frozen_norm_output_does_not_depend_on_batch_companions() {
    let (mut net, mut store) = build_gunet::<f64>(&ModelConfig::micro(4, 1), 5).unwrap();
    gunet::gradcheck::randomize_params(&mut store, 5);
    net.set_norm_mode(NormMode::Frozen);
    let (hazy, _) = toy_batch(2);
    let order = [5, 2, 7, 0, 1, 6, 3, 4];
    let shuffled = hazy.select_batch(&order);
    let before = store.clone();
    let run = |x: &Tensor<f64>| {
        let mut ctx = net.ctx(&store).recording();
        let out = net.forward(&mut ctx, x).unwrap().0;
        assert!(ctx.into_stat_updates().is_empty());
        out
    };
    let (a, b) = (run(&hazy), run(&shuffled));
    for (k, &src) in order.iter().enumerate() {
        assert_eq!(b.sample(k), a.sample(src));
    }
    for (x, y) in store.entries().iter().zip(before.entries()) {
        assert_eq!(x.tensor.data(), y.tensor.data());
    }
}
