//! The training loop: seeded random crops, L1 loss, AdamW with warmup and
//! cosine annealing, a frozen-BN tail, per-epoch validation and
//! best-checkpoint tracking.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::haze::{psnr, ssim, ImagePair};
use crate::model::{Gunet, ParamStore};
use crate::ops::{self, NormMode};
use crate::tensor::{Float, Shape, Tensor};
use crate::train::checkpoint::save_checkpoint;
use crate::train::config::TrainConfig;
use crate::train::optim::{adamw_step, clip_grad_norm, lr_at, AdamConfig, AdamState};

pub const METRICS_HEADER: &str = "epoch,step,lr,train_l1,val_psnr,val_ssim";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    /// Optimizer steps completed so far.
    pub step: usize,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    /// Mean training loss over the epoch.
    pub train_l1: f64,
    pub val_psnr: f64,
    pub val_ssim: f64,
}

impl MetricsRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.step, self.lr, self.train_l1, self.val_psnr, self.val_ssim
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Receives `metrics.csv`, `best.gunt` and `last.gunt`.
    pub out_dir: Option<PathBuf>,
    /// Print one line per epoch to stderr.
    pub verbose: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub store: ParamStore<T>,
    pub log: Vec<MetricsRow>,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    pub best_epoch: Option<usize>,
}

/// Crop `k` of `epoch`: an image index, a window and a horizontal flip, all
/// drawn from a stream keyed by `(seed, epoch, k)`.
pub fn sample_crop<T: Float>(pairs: &[ImagePair<T>], crop: usize, seed: u64, epoch: usize, k: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | k as u64);
    let pair = &pairs[rng.random_range(0..pairs.len())];
    let s = pair.hazy.shape();
    if s.h < crop || s.w < crop {
        return Err(Error::config(format!(
            "crop {crop} is larger than a {}x{} training image",
            s.h, s.w
        )));
    }
    let y0 = rng.random_range(0..=s.h - crop);
    let x0 = rng.random_range(0..=s.w - crop);
    let flip = rng.random_bool(0.5);
    let cut = |t: &Tensor<T>| {
        Tensor::from_fn(Shape::new(1, 3, crop, crop), |_, c, y, x| {
            let xs = if flip { crop - 1 - x } else { x };
            t.at(0, c, y0 + y, x0 + xs)
        })
    };
    Ok((cut(&pair.hazy), cut(&pair.clean)))
}

/// Batch `step` of `epoch` as `(hazy, clean)`.
pub fn sample_batch<T: Float>(pairs: &[ImagePair<T>], cfg: &TrainConfig, epoch: usize, step: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let crops: Vec<_> = (0..cfg.batch_size)
        .into_par_iter()
        .map(|b| sample_crop(pairs, cfg.crop, cfg.seed, epoch, step * cfg.batch_size + b))
        .collect::<Result<_>>()?;
    let hazy: Vec<&Tensor<T>> = crops.iter().map(|c| &c.0).collect();
    let clean: Vec<&Tensor<T>> = crops.iter().map(|c| &c.1).collect();
    Ok((Tensor::stack(&hazy)?, Tensor::stack(&clean)?))
}

/// Mean PSNR and SSIM of the dehazed validation images.
pub fn evaluate<T: Float>(net: &Gunet, store: &ParamStore<T>, pairs: &[ImagePair<T>]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let scores: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|p| {
            let out = net.dehaze(store, &p.hazy)?;
            Ok((psnr(&out, &p.clean)?, ssim(&out, &p.clean)?))
        })
        .collect::<Result<_>>()?;
    let n = scores.len() as f64;
    Ok((
        scores.iter().map(|s| s.0).sum::<f64>() / n,
        scores.iter().map(|s| s.1).sum::<f64>() / n,
    ))
}

/// Mean PSNR of the hazy inputs themselves (the do-nothing baseline).
pub fn hazy_baseline<T: Float>(pairs: &[ImagePair<T>]) -> Result<f64> {
    let total = pairs.iter().map(|p| psnr(&p.hazy, &p.clean)).sum::<Result<f64>>()?;
    Ok(total / pairs.len() as f64)
}

/// One forward/backward pass on a batch; returns the loss. Gradients are
/// left in `store` and running statistics are updated.
pub fn train_step<T: Float>(
    net: &Gunet,
    store: &mut ParamStore<T>,
    hazy: &Tensor<T>,
    clean: &Tensor<T>,
) -> Result<f64> {
    let (out, cache, updates) = {
        let mut ctx = net.ctx(store).recording();
        let (out, cache) = net.forward(&mut ctx, hazy)?;
        (out, cache, ctx.into_stat_updates())
    };
    let loss = ops::l1_loss(&out, clean)?.as_f64();
    if !loss.is_finite() {
        let layer = net
            .first_nonfinite_layer(store, hazy)
            .unwrap_or_else(|| "loss".to_string());
        return Err(Error::NonFinite {
            layer,
            detail: format!("training loss is {loss}"),
        });
    }
    store.zero_grads();
    net.backward(store, &cache, &ops::l1_loss_backward(&out, clean)?)?;
    store.apply_stat_updates(updates);
    Ok(loss)
}

struct Outputs {
    dir: PathBuf,
    metrics: fs::File,
}

impl Outputs {
    fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("metrics.csv");
        let mut metrics = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        writeln!(metrics, "{METRICS_HEADER}").map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            metrics,
        })
    }

    fn row(&mut self, row: &MetricsRow) -> Result<()> {
        let path = self.dir.join("metrics.csv");
        writeln!(self.metrics, "{}", row.csv())
            .and_then(|_| self.metrics.flush())
            .map_err(|e| Error::io(&path, e))
    }
}

/// Trains `net` from `store`. With `epochs == 0` the initial parameters are
/// returned untouched. On a non-finite loss the run aborts with an error
/// naming the first layer that produced non-finite values.
pub fn train_loop<T: Float>(
    net: &mut Gunet,
    store: ParamStore<T>,
    train: &[ImagePair<T>],
    val: &[ImagePair<T>],
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let mut store = store;
    let mut outcome = TrainOutcome {
        store: store.clone(),
        log: Vec::new(),
        step_losses: Vec::new(),
        best_epoch: None,
    };
    if cfg.epochs == 0 {
        return Ok(outcome);
    }
    if train.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let mut outputs = opts.out_dir.as_deref().map(Outputs::open).transpose()?;
    net.ghost = cfg.ghost_norm_size;
    net.set_norm_mode(NormMode::Train);
    let adam = AdamConfig::from(cfg);
    let mut state = AdamState::new(&store);
    let (steps, total, warmup) = (cfg.steps_per_epoch(), cfg.total_steps(), cfg.warmup_steps());
    let mut best = f64::NEG_INFINITY;
    let mut global = 0;

    for epoch in 0..cfg.epochs {
        if epoch == cfg.frozen_from_epoch() {
            net.set_norm_mode(NormMode::Frozen);
        }
        let mut epoch_loss = 0.0;
        let mut lr = 0.0;
        for step in 0..steps {
            let (hazy, clean) = sample_batch(train, cfg, epoch, step)?;
            let loss = train_step(net, &mut store, &hazy, &clean)?;
            let norm = clip_grad_norm(&mut store, cfg.grad_clip);
            if !norm.is_finite() {
                return Err(Error::NonFinite {
                    layer: "gradients".into(),
                    detail: format!("gradient norm {norm} at epoch {epoch}, step {step}"),
                });
            }
            global += 1;
            lr = lr_at(global, total, warmup, cfg.lr_init, cfg.lr_min);
            adamw_step(&mut store, &mut state, lr, &adam);
            epoch_loss += loss;
            outcome.step_losses.push(loss);
        }
        let (val_psnr, val_ssim) = evaluate(net, &store, val)?;
        let row = MetricsRow {
            epoch,
            step: global,
            lr,
            train_l1: epoch_loss / steps as f64,
            val_psnr,
            val_ssim,
        };
        if opts.verbose {
            eprintln!(
                "epoch {epoch:>4} step {global:>6} lr {lr:.3e} l1 {:.5} val psnr {val_psnr:.3} ssim {val_ssim:.4}",
                row.train_l1
            );
        }
        if let Some(o) = outputs.as_mut() {
            o.row(&row)?;
        }
        if val_psnr > best {
            best = val_psnr;
            outcome.best_epoch = Some(epoch);
            if let Some(o) = &outputs {
                save_checkpoint(&store, &net.config, &o.dir.join("best.gunt"))?;
            }
        }
        outcome.log.push(row);
    }
    if let Some(o) = &outputs {
        save_checkpoint(&store, &net.config, &o.dir.join("last.gunt"))?;
    }
    outcome.store = store;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haze::{generate_dataset, DepthKind};
    use crate::model::{build_gunet, ModelConfig};

    fn tiny() -> (TrainConfig, Vec<ImagePair<f64>>) {
        let cfg = TrainConfig {
            epochs: 2,
            samples_per_epoch: 8,
            batch_size: 4,
            warmup_epochs: 1,
            frozen_bn_epochs: 1,
            crop: 16,
            ..TrainConfig::default()
        };
        (cfg, generate_dataset(6, 24, 1, DepthKind::Mixed).unwrap())
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let (mut cfg, data) = tiny();
        cfg.epochs = 0;
        cfg.warmup_epochs = 0;
        cfg.frozen_bn_epochs = 0;
        let (mut net, store) = build_gunet::<f64>(&ModelConfig::micro(4, 1), 0).unwrap();
        let out = train_loop(&mut net, store.clone(), &data, &data, &cfg, &TrainOptions::default()).unwrap();
        assert!(out.log.is_empty());
        for (a, b) in out.store.entries().iter().zip(store.entries()) {
            assert_eq!(a.tensor.data(), b.tensor.data());
        }
    }

    #[test]
    fn crops_are_reproducible_and_seed_dependent() {
        let (cfg, data) = tiny();
        let a = sample_batch(&data, &cfg, 3, 1).unwrap();
        let b = sample_batch(&data, &cfg, 3, 1).unwrap();
        assert_eq!(a.0, b.0);
        let c = sample_batch(&data, &TrainConfig { seed: 1, ..cfg }, 3, 1).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn writes_metrics_and_checkpoints() {
        let (cfg, data) = tiny();
        let dir = tempfile::tempdir().unwrap();
        let (mut net, store) = build_gunet::<f64>(&ModelConfig::micro(4, 1), 0).unwrap();
        let opts = TrainOptions {
            out_dir: Some(dir.path().to_path_buf()),
            verbose: false,
        };
        let out = train_loop(&mut net, store, &data[..4], &data[4..], &cfg, &opts).unwrap();
        assert_eq!(out.log.len(), 2);
        assert_eq!(out.step_losses.len(), 4);
        assert_eq!(net.norm_mode, NormMode::Frozen);
        let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert!(csv.starts_with(METRICS_HEADER));
        assert_eq!(csv.lines().count(), 3);
        assert!(dir.path().join("best.gunt").is_file());
        assert!(dir.path().join("last.gunt").is_file());
    }

    #[test]
    fn non_finite_input_names_a_layer() {
        let (mut net, store) = build_gunet::<f64>(&ModelConfig::micro(4, 1), 0).unwrap();
        let mut store = store;
        let mut hazy = Tensor::full(Shape::new(2, 3, 8, 8), 0.5);
        hazy.data_mut()[5] = f64::NAN;
        net.set_norm_mode(NormMode::Train);
        let clean = Tensor::full(hazy.shape(), 0.5);
        match train_step(&net, &mut store, &hazy, &clean) {
            Err(Error::NonFinite { layer, .. }) => assert_eq!(layer, "stem"),
            other => panic!("expected a non-finite error, got {other:?}"),
        }
    }
}
