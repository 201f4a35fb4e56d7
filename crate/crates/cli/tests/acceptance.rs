//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs as a plain binary (no libtest harness) so the lines
//! are always printed.
//!
//! Criteria 6–8 train the micro model four times (2000 steps each); expect
//! roughly 40 minutes on a single core.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use gunet::cost::{count_macs, count_params};
use gunet::gradcheck::{self, Scope, MODEL_TOLERANCE, OP_TOLERANCE};
use gunet::haze::{generate_dataset, generate_pair, invert_haze, synthesize_haze, DepthKind, HazeParams, ImagePair};
use gunet::model::{build_gunet, ModelConfig, ParamStore};
use gunet::ops::{GhostSize, NormMode};
use gunet::train::{evaluate, hazy_baseline, train_loop, MetricsRow, TrainConfig, TrainOptions};
use gunet::{DType, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    id: usize,
    pass: bool,
    detail: String,
}

fn report(id: usize, pass: bool, detail: impl Into<String>) -> Outcome {
    let o = Outcome {
        id,
        pass,
        detail: detail.into(),
    };
    println!("criterion {} {}  {}", o.id, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    o
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value / target - 1.0).abs() <= tol
}

/// Runs `gunet count --preset <p>` and parses the exact totals.
fn cli_count(preset: &str) -> (u64, u64, Duration) {
    let t = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_gunet"))
        .args(["count", "--preset", preset])
        .output()
        .expect("run gunet count");
    let elapsed = t.elapsed();
    assert!(out.status.success(), "gunet count --preset {preset} failed");
    let text = String::from_utf8(out.stdout).unwrap();
    let total = |label: &str| -> u64 {
        let line = text.lines().find(|l| l.starts_with(label)).expect("total line");
        let inner = line.rsplit_once('(').unwrap().1.trim_end_matches(')');
        inner.parse().unwrap()
    };
    (total("params"), total("MACs"), elapsed)
}

fn criterion_1() -> Outcome {
    const PUBLISHED: [(&str, f64, f64); 4] = [
        ("T", 0.805e6, 2.595e9),
        ("S", 1.408e6, 4.579e9),
        ("B", 2.614e6, 8.548e9),
        ("D", 5.025e6, 16.48e9),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, params, macs) in PUBLISHED {
        let (p, m, elapsed) = cli_count(name);
        let ok = within(p as f64, params, 0.10) && within(m as f64, macs, 0.10) && elapsed < Duration::from_secs(1);
        pass &= ok;
        parts.push(format!(
            "{name}: {:.3}M ({:+.1}%) {:.3}G ({:+.1}%) {:.0}ms",
            p as f64 / 1e6,
            (p as f64 / params - 1.0) * 100.0,
            m as f64 / 1e9,
            (m as f64 / macs - 1.0) * 100.0,
            elapsed.as_secs_f64() * 1e3
        ));
    }
    report(1, pass, parts.join("; "))
}

fn ablated(spec: &str) -> ModelConfig {
    let mut c = ModelConfig::preset("T").unwrap();
    c.apply_ablation(spec).unwrap();
    c
}

fn criterion_2() -> Outcome {
    let params = |c: &ModelConfig| count_params(c).unwrap() as f64;
    let macs = |c: &ModelConfig| count_macs(c, (256, 256)).unwrap() as f64;
    let t = ModelConfig::preset("T").unwrap();
    let s = ModelConfig::preset("S").unwrap();
    let (k3, k7) = (ablated("k=3"), ablated("k=7"));
    let (s5, s9) = (ablated("stages=5"), ablated("stages=9"));
    let (sum, cat) = (ablated("fusion=sum"), ablated("fusion=concat"));

    let ratio_s = params(&s) / params(&t);
    let ratio_k = params(&k7) / params(&t);
    let checks = [
        ("S/T params", within(ratio_s, 1.749, 0.05)),
        ("k7/k5 params", within(ratio_k, 1.041, 0.03)),
        ("MACs k3<k5<k7", macs(&k3) < macs(&t) && macs(&t) < macs(&k7)),
        ("params 5<7<9 stages", params(&s5) < params(&t) && params(&t) < params(&s9)),
        ("MACs sum<sk<concat", macs(&sum) < macs(&t) && macs(&t) < macs(&cat)),
    ];
    let pass = checks.iter().all(|c| c.1);
    let nine = params(&s9);
    let nine_note = if within(nine, 3.150e6, 0.25) {
        format!("9-stage {:.3}M vs 3.150M ({:+.1}%)", nine / 1e6, (nine / 3.150e6 - 1.0) * 100.0)
    } else {
        format!("9-stage {:.3}M misses 3.150M by >25% (recorded, not failing)", nine / 1e6)
    };
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    report(
        2,
        pass,
        format!(
            "S/T {ratio_s:.3}, k7/k5 {ratio_k:.4}, orderings {}; {nine_note}",
            if failed.is_empty() { "hold".to_string() } else { format!("fail: {}", failed.join(", ")) }
        ),
    )
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let ops = gradcheck::run(Scope::Op).unwrap();
    let blocks = gradcheck::run(Scope::Block).unwrap();
    let model = gradcheck::model_check(&ModelConfig::micro(4, 1), 16, usize::MAX).unwrap();
    let elapsed = t.elapsed();
    for c in ops.failures().chain(blocks.failures()).chain(model.failures()) {
        println!("    {c}");
    }
    let pass = ops.passed()
        && blocks.passed()
        && model.passed()
        && ops.max_rel_err() < OP_TOLERANCE
        && blocks.max_rel_err() < OP_TOLERANCE
        && model.max_rel_err() < MODEL_TOLERANCE
        && elapsed < Duration::from_secs(300);
    let checked: usize = model.checks.iter().map(|c| c.checked).sum();
    report(
        3,
        pass,
        format!(
            "{} op checks max {:.2e}; {} block checks max {:.2e}; model {checked} entries max {:.2e}; {:.0}s",
            ops.checks.len(),
            ops.max_rel_err(),
            blocks.checks.len(),
            blocks.max_rel_err(),
            model.max_rel_err(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_4() -> Outcome {
    let cfg = ModelConfig::preset("T").unwrap();
    let (mut net, mut store64) = build_gunet::<f64>(&cfg, 0).unwrap();
    gunet::gradcheck::randomize_params(&mut store64, 0);
    let store: ParamStore<f32> = store64.cast();
    net.set_norm_mode(NormMode::Eval);
    let (folded, fstore) = net.fold_norms(&store).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0f32;
    for _ in 0..20 {
        let x = Tensor::from_fn(Shape::new(1, 3, 64, 64), |_, _, _, _| rng.random_range(0.0f32..1.0));
        let a = net.dehaze(&store, &x).unwrap();
        let b = folded.dehaze(&fstore, &x).unwrap();
        worst = worst.max(a.max_abs_diff(&b));
    }
    report(4, worst < 1e-4, format!("max abs diff {worst:.2e} over 20 inputs (f32)"))
}

/// Max round-trip error where nothing clamped, and whether beta = 0 is exact.
fn haze_round_trip() -> (f64, bool, Vec<f64>) {
    let mut worst = 0f64;
    let mut zero_beta_exact = true;
    let mut digest = Vec::new();
    for i in 0..100 {
        let pair: ImagePair<f64> = generate_pair(i, 48, 5, DepthKind::Mixed).unwrap();
        let params = pair.params.unwrap();
        let hazy = synthesize_haze(&pair.clean, &params).unwrap();
        let back = invert_haze(&hazy, &params, gunet::haze::DEFAULT_T_FLOOR).unwrap();
        let t = params.transmission();
        let plane = params.height * params.width;
        for (k, ((&j, &i_), &b)) in pair.clean.data().iter().zip(hazy.data()).zip(back.data()).enumerate() {
            let clamped = i_ <= 0.0 || i_ >= 1.0 || t[k % plane] < gunet::haze::DEFAULT_T_FLOOR;
            if !clamped {
                worst = worst.max((b - j).abs());
            }
        }
        let clear = HazeParams { beta: 0.0, ..params };
        zero_beta_exact &= synthesize_haze(&pair.clean, &clear).unwrap().data() == pair.clean.data();
        digest.extend_from_slice(&back.data()[..8]);
    }
    (worst, zero_beta_exact, digest)
}

fn criterion_5() -> (Outcome, Vec<f64>) {
    let (worst, exact, digest) = haze_round_trip();
    let o = report(
        5,
        worst < 1e-5 && exact,
        format!("max round-trip error {worst:.2e} on 100 images; beta=0 bit-exact: {exact}"),
    );
    (o, digest)
}

/// The toy recipe: 2000 AdamW steps of batch 8 on 200 pairs of 64x64.
fn toy_config(ghost: GhostSize) -> TrainConfig {
    TrainConfig {
        epochs: 40,
        samples_per_epoch: 400,
        batch_size: 8,
        lr_init: 3e-3,
        lr_min: 3e-5,
        warmup_epochs: 2,
        frozen_bn_epochs: 8,
        crop: 64,
        seed: 0,
        ghost_norm_size: ghost,
        dtype: DType::F64,
        ..TrainConfig::default()
    }
}

struct ToyRun {
    log: Vec<MetricsRow>,
    step_losses: Vec<f64>,
    elapsed: Duration,
}

impl ToyRun {
    fn final_psnr(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |r| r.val_psnr)
    }
}

fn toy_run(train: &[ImagePair<f64>], val: &[ImagePair<f64>], ghost: GhostSize) -> ToyRun {
    let cfg = toy_config(ghost);
    assert_eq!(cfg.total_steps(), 2000);
    let (mut net, store) = build_gunet::<f64>(&ModelConfig::micro(8, 1), 0).unwrap();
    let t = Instant::now();
    let out = train_loop(&mut net, store, train, val, &cfg, &TrainOptions::default()).unwrap();
    ToyRun {
        log: out.log,
        step_losses: out.step_losses,
        elapsed: t.elapsed(),
    }
}

fn main() -> ExitCode {
    // `cargo test` passes libtest flags such as `--nocapture` or a name
    // filter; only a filter that excludes "acceptance" skips the suite.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !filters.is_empty() && !filters.iter().any(|f| "acceptance".contains(f.as_str())) {
        return ExitCode::SUCCESS;
    }
    let mut outcomes = vec![criterion_1(), criterion_2(), criterion_3(), criterion_4()];
    let (c5, digest) = criterion_5();
    outcomes.push(c5);

    let train = generate_dataset::<f64>(200, 64, 1, DepthKind::Mixed).unwrap();
    let val = generate_dataset::<f64>(40, 64, 2, DepthKind::Mixed).unwrap();
    let baseline = hazy_baseline(&val).unwrap();
    let (net, init) = build_gunet::<f64>(&ModelConfig::micro(8, 1), 0).unwrap();
    let untrained = evaluate(&net, &init, &val).unwrap().0;

    let eight = toy_run(&train, &val, GhostSize::Size(8));
    let gain = eight.final_psnr() - baseline;
    outcomes.push(report(
        6,
        gain >= 5.0 && untrained == baseline && eight.elapsed < Duration::from_secs(1800),
        format!(
            "held-out PSNR {:.3} dB vs hazy {baseline:.3} dB ({gain:+.3} dB); untrained {untrained:.6} dB (== hazy: {}); {:.0}s",
            eight.final_psnr(),
            untrained == baseline,
            eight.elapsed.as_secs_f64()
        ),
    ));

    let one = toy_run(&train, &val, GhostSize::Size(1));
    let gap = eight.final_psnr() - one.final_psnr();
    outcomes.push(report(
        7,
        gap >= 0.5,
        format!(
            "final val PSNR ghost 8 {:.3} dB, ghost 1 {:.3} dB (gap {gap:.3} dB)",
            eight.final_psnr(),
            one.final_psnr()
        ),
    ));

    let (_, _, digest_again) = haze_round_trip();
    let eight_again = toy_run(&train, &val, GhostSize::Size(8));
    let one_again = toy_run(&train, &val, GhostSize::Size(1));
    let same = |a: &ToyRun, b: &ToyRun| a.log == b.log && a.step_losses == b.step_losses;
    let checks = [
        ("haze", digest == digest_again),
        ("ghost 8", same(&eight, &eight_again)),
        ("ghost 1", same(&one, &one_again)),
    ];
    outcomes.push(report(
        8,
        checks.iter().all(|c| c.1),
        checks
            .iter()
            .map(|(n, ok)| format!("{n}: {}", if *ok { "identical" } else { "differs" }))
            .collect::<Vec<_>>()
            .join(", "),
    ));

    let failed: Vec<usize> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", outcomes.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
