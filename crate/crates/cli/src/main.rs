//! `gunet`: describe and cost models, synthesize hazy data, train, dehaze
//! and run gradient checks.
//!
//! Exit codes: 0 ok, 1 usage, 2 i/o or malformed file, 3 configuration
//! (including checkpoint fingerprint mismatch), 4 numeric (non-finite
//! values, failed gradient checks), 5 internal.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gunet::cost::{cost_report, emit_cost_csv};
use gunet::gradcheck::{self, Scope};
use gunet::haze::{
    generate_dataset, load_dataset, read_image, save_dataset, side_by_side, write_image, DepthKind, ImagePair,
};
use gunet::model::{build_gunet, ModelConfig};
use gunet::settings::RunConfig;
use gunet::train::{checkpoint_config, hazy_baseline, load_checkpoint, train_loop, TrainOptions};
use gunet::{DType, Error, Float};
use serde::Serialize;

use crate::manifest::RunManifest;

#[derive(Parser, Debug)]
#[command(name = "gunet", version, about = "Gated-convolution U-Net for single image dehazing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print per-stage widths and depths, parameter totals and ablation knobs.
    Describe {
        #[command(flatten)]
        model: ModelArgs,
        /// Emit JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Count parameters and multiply-accumulates.
    Count {
        #[command(flatten)]
        model: ModelArgs,
        /// Input resolution.
        #[arg(long, num_args = 2, value_names = ["H", "W"], default_values_t = [256, 256])]
        res: Vec<usize>,
        /// Write a per-layer CSV report here.
        #[arg(long, value_name = "PATH")]
        csv: Option<PathBuf>,
    },
    /// Generate synthetic clean/hazy pairs into `<out>/clean` and `<out>/hazy`.
    Synth {
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// Side length of the square images.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// ramp, radial, perlin-like or mixed.
        #[arg(long, default_value = "mixed")]
        depth: DepthKind,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes metrics.csv, best.gunt, last.gunt and run.toml.
    Train(TrainArgs),
    /// Dehaze one image with a trained checkpoint.
    Dehaze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Also write a hazy | dehazed side-by-side image here.
        #[arg(long, value_name = "PATH")]
        compare: Option<PathBuf>,
    },
    /// Finite-difference gradient checks; exits 4 listing any failures.
    Gradcheck {
        /// op, block or model.
        #[arg(long, default_value = "op")]
        scope: Scope,
        /// Print every check, not only failures.
        #[arg(long)]
        verbose: bool,
    },
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Model preset: T, S, B or D.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Run configuration file; only its [model] section is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ablation override `key=value` (fusion, norm, gate, nonlin, attention,
    /// k, stages, m, n, width, depth, padding). Repeatable.
    #[arg(long, value_name = "KEY=VALUE")]
    ablate: Vec<String>,
}

impl ModelArgs {
    fn resolve(&self) -> Result<ModelConfig, Error> {
        let mut cfg = match (&self.preset, &self.config) {
            (_, Some(path)) => RunConfig::load(path)?.model,
            (Some(p), None) => ModelConfig::preset(p)?,
            (None, None) => ModelConfig::default(),
        };
        for a in &self.ablate {
            cfg.apply_ablation(a)?;
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Run configuration file with [model], [train] and [data] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override `section.key=value`, applied after the file. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Directory written by `synth`; overrides data.dir.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Seeds model initialization and crop sampling; overrides train.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress per-epoch progress lines.
    #[arg(long)]
    quiet: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Image { .. } | Error::Format { .. } => 2,
        Error::Config(_) | Error::Fingerprint { .. } => 3,
        Error::NonFinite { .. } => 4,
        Error::Shape(_) | Error::Contract(_) => 5,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Command) -> Result<u8, Error> {
    match cmd {
        Command::Describe { model, json } => describe(&model.resolve()?, json),
        Command::Count { model, res, csv } => count(&model.resolve()?, (res[0], res[1]), csv.as_deref()),
        Command::Synth {
            n,
            size,
            seed,
            depth,
            out,
        } => {
            let pairs = generate_dataset::<f64>(n, size, seed, depth)?;
            save_dataset(&pairs, &out)?;
            println!("wrote {n} pairs of {size}x{size} to {}", out.display());
            Ok(0)
        }
        Command::Train(args) => train(args),
        Command::Dehaze {
            checkpoint,
            input,
            output,
            compare,
        } => dehaze(&checkpoint, &input, &output, compare.as_deref()),
        Command::Gradcheck { scope, verbose } => {
            let report = gradcheck::run(scope)?;
            for c in &report.checks {
                if verbose || !c.passed() {
                    println!("{c}");
                }
            }
            let failures = report.failures().count();
            println!(
                "{} checks, {failures} failed, max rel err {:.3e}",
                report.checks.len(),
                report.max_rel_err()
            );
            Ok(if failures == 0 { 0 } else { 4 })
        }
    }
}

#[derive(Serialize)]
struct StageRow {
    index: usize,
    role: &'static str,
    scale: usize,
    width: usize,
    blocks: usize,
}

#[derive(Serialize)]
struct Description {
    stages: Vec<StageRow>,
    params: u64,
    config: ModelConfig,
}

fn describe(cfg: &ModelConfig, json: bool) -> Result<u8, Error> {
    let h = cfg.half();
    let stages = cfg
        .stages()
        .into_iter()
        .enumerate()
        .map(|(i, s)| StageRow {
            index: i,
            role: match i.cmp(&h) {
                std::cmp::Ordering::Less => "encoder",
                std::cmp::Ordering::Equal => "bottleneck",
                std::cmp::Ordering::Greater => "decoder",
            },
            scale: s.scale,
            width: s.width,
            blocks: s.blocks,
        })
        .collect::<Vec<_>>();
    let d = Description {
        params: gunet::cost::count_params(cfg)?,
        stages,
        config: cfg.clone(),
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&d).expect("description serializes"));
        return Ok(0);
    }
    println!("{:>5}  {:<10} {:>5} {:>6} {:>6}", "stage", "role", "scale", "width", "blocks");
    for s in &d.stages {
        println!("{:>5}  {:<10} {:>4}x {:>6} {:>6}", s.index, s.role, s.scale, s.width, s.blocks);
    }
    let widths: Vec<String> = d.stages.iter().map(|s| s.width.to_string()).collect();
    println!("widths      {}", widths.join(","));
    println!("params      {} ({:.3}M)", d.params, d.params as f64 / 1e6);
    println!("dw_kernel   {}", cfg.dw_kernel);
    println!("norm        {:?}", cfg.norm_kind);
    println!("gate        {:?}", cfg.gate_kind);
    println!("nonlin      {:?}", cfg.nonlin_ablation);
    println!("fusion      {:?}", cfg.fusion_kind);
    println!("attention   {:?}", cfg.extra_attention);
    println!("width_mult  {}", cfg.width_multiplier);
    println!("padding     {:?}", cfg.padding);
    Ok(0)
}

fn count(cfg: &ModelConfig, res: (usize, usize), csv: Option<&Path>) -> Result<u8, Error> {
    let report = cost_report(cfg, res)?;
    if let Some(path) = csv {
        emit_cost_csv(&report, path)?;
    }
    println!("resolution  {}x{}", res.0, res.1);
    println!("params      {:.3}M ({})", report.total_params() as f64 / 1e6, report.total_params());
    println!("MACs        {:.3}G ({})", report.total_macs() as f64 / 1e9, report.total_macs());
    Ok(0)
}

fn train(args: TrainArgs) -> Result<u8, Error> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for s in &args.set {
        cfg.set(s)?;
    }
    if let Some(d) = &args.data {
        cfg.data.dir = Some(d.clone());
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    let mut manifest = RunManifest::start(&cfg, &args.out);
    manifest.save(&args.out)?;
    let result = match cfg.train.dtype {
        DType::F32 => train_typed::<f32>(&cfg, &args, &mut manifest),
        DType::F64 => train_typed::<f64>(&cfg, &args, &mut manifest),
    };
    manifest.finish(result.as_ref().err());
    manifest.save(&args.out)?;
    result.map(|()| 0)
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn load_pairs<T: Float>(cfg: &RunConfig) -> Result<(Vec<ImagePair<T>>, Vec<ImagePair<T>>), Error> {
    let mut pairs = match &cfg.data.dir {
        Some(dir) => load_dataset::<T>(dir)?,
        None => generate_dataset::<T>(cfg.data.n, cfg.data.size, cfg.data.seed, cfg.data.depth_kind)?,
    };
    if cfg.data.val_count >= pairs.len() {
        return Err(Error::Config(format!(
            "val_count ({}) leaves no training pairs out of {}",
            cfg.data.val_count,
            pairs.len()
        )));
    }
    let val = pairs.split_off(pairs.len() - cfg.data.val_count);
    Ok((pairs, val))
}

fn train_typed<T: Float>(cfg: &RunConfig, args: &TrainArgs, manifest: &mut RunManifest) -> Result<(), Error> {
    let (train, val) = load_pairs::<T>(cfg)?;
    let (mut net, store) = build_gunet::<T>(&cfg.model, cfg.train.seed)?;
    let opts = TrainOptions {
        out_dir: Some(args.out.clone()),
        verbose: !args.quiet,
    };
    let baseline = if val.is_empty() { None } else { Some(hazy_baseline(&val)?) };
    let outcome = train_loop(&mut net, store, &train, &val, &cfg.train, &opts)?;
    manifest.record(baseline, &outcome);
    if let (Some(b), Some(last)) = (baseline, outcome.log.last()) {
        println!(
            "hazy psnr {b:.3} dB, final val psnr {:.3} dB ({:+.3} dB)",
            last.val_psnr,
            last.val_psnr - b
        );
    }
    Ok(())
}

fn dehaze(checkpoint: &Path, input: &Path, output: &Path, compare: Option<&Path>) -> Result<u8, Error> {
    let config = checkpoint_config(checkpoint)?;
    let (net, mut store) = build_gunet::<f64>(&config, 0)?;
    load_checkpoint(&mut store, checkpoint)?;
    let hazy = read_image::<f64>(input)?;
    let out = net.dehaze(&store, &hazy)?;
    if out.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            layer: net
                .first_nonfinite_layer(&store, &hazy)
                .unwrap_or_else(|| "output".into()),
            detail: format!("dehazing {}", input.display()),
        });
    }
    write_image(&out, output)?;
    if let Some(path) = compare {
        write_image(&side_by_side(&[&hazy, &out])?, path)?;
    }
    Ok(0)
}
