use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::GhostSize;
use crate::tensor::DType;

/// Optimization recipe. Defaults are a desk-scale version of the original
/// 1000-epoch schedule that keeps its warmup and frozen-BN proportions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub samples_per_epoch: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub warmup_epochs: usize,
    /// The last this-many epochs run batch norms as fixed affine maps.
    pub frozen_bn_epochs: usize,
    /// Decoupled weight decay on conv weights. Not stated in the original
    /// recipe; 0.01 is the common AdamW default.
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub grad_clip: f64,
    pub crop: usize,
    pub seed: u64,
    pub ghost_norm_size: GhostSize,
    pub dtype: DType,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            samples_per_epoch: 512,
            batch_size: 8,
            lr_init: 4e-4,
            lr_min: 4e-6,
            warmup_epochs: 3,
            frozen_bn_epochs: 10,
            weight_decay: 0.01,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            grad_clip: 1.0,
            crop: 64,
            seed: 0,
            ghost_norm_size: GhostSize::Full,
            dtype: DType::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.warmup_epochs + self.frozen_bn_epochs > self.epochs && self.epochs > 0 {
            return fail(format!(
                "warmup ({}) + frozen-BN ({}) epochs exceed the {} training epochs",
                self.warmup_epochs, self.frozen_bn_epochs, self.epochs
            ));
        }
        if !(self.lr_init > 0.0 && self.lr_min > 0.0 && self.lr_min <= self.lr_init) {
            return fail(format!(
                "learning rates must satisfy 0 < lr_min ({}) <= lr_init ({})",
                self.lr_min, self.lr_init
            ));
        }
        if self.batch_size == 0 || self.crop == 0 {
            return fail("batch size and crop must be positive".into());
        }
        if self.samples_per_epoch < self.batch_size {
            return fail(format!(
                "samples_per_epoch ({}) is smaller than one batch ({})",
                self.samples_per_epoch, self.batch_size
            ));
        }
        if !(self.weight_decay >= 0.0 && self.grad_clip >= 0.0 && self.adam_eps > 0.0) {
            return fail("weight_decay and grad_clip must be >= 0 and adam_eps > 0".into());
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return fail(format!("betas ({b1}, {b2}) must lie in [0, 1)"));
        }
        self.ghost_norm_size.resolve(self.batch_size)?;
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.samples_per_epoch / self.batch_size
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch()
    }

    pub fn warmup_steps(&self) -> usize {
        self.warmup_epochs * self.steps_per_epoch()
    }

    /// First epoch (0-based) that runs with frozen batch norms.
    pub fn frozen_from_epoch(&self) -> usize {
        self.epochs.saturating_sub(self.frozen_bn_epochs)
    }
}
