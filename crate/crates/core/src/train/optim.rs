//! Learning-rate schedule, gradient clipping and AdamW.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::model::ParamStore;
use crate::tensor::Float;
use crate::train::config::TrainConfig;

/// Linear warmup `0 -> lr_init` over `warmup_steps`, then cosine annealing
/// reaching `lr_min` exactly at `total_steps`. Optimizer step `k` (0-based)
/// uses `step = k + 1`.
pub fn lr_at(step: usize, total_steps: usize, warmup_steps: usize, lr_init: f64, lr_min: f64) -> f64 {
    if step < warmup_steps {
        return lr_init * step as f64 / warmup_steps as f64;
    }
    let span = total_steps.saturating_sub(warmup_steps);
    if span == 0 {
        return lr_init;
    }
    let progress = ((step - warmup_steps) as f64 / span as f64).min(1.0);
    lr_min + 0.5 * (lr_init - lr_min) * (1.0 + (PI * progress).cos())
}

/// [`lr_at`] with the warmup length taken from `config`'s epoch proportions.
pub fn lr_schedule(step: usize, total_steps: usize, config: &TrainConfig) -> f64 {
    let warmup = if config.epochs == 0 {
        0
    } else {
        total_steps * config.warmup_epochs / config.epochs
    };
    lr_at(step, total_steps, warmup, config.lr_init, config.lr_min)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl From<&TrainConfig> for AdamConfig {
    fn from(c: &TrainConfig) -> Self {
        Self {
            beta1: c.betas.0,
            beta2: c.betas.1,
            eps: c.adam_eps,
            weight_decay: c.weight_decay,
        }
    }
}

/// First and second moments per store entry.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Float> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros = || {
            store
                .entries()
                .iter()
                .map(|e| vec![T::zero(); e.tensor.numel()])
                .collect()
        };
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// Scales all learnable gradients so their global norm is at most
/// `max_norm` (a no-op when `max_norm == 0`). Returns the pre-clip norm.
pub fn clip_grad_norm<T: Float>(store: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = store.grad_norm().as_f64();
    if max_norm > 0.0 && norm > max_norm {
        let k = T::c(max_norm / (norm + 1e-6));
        for e in store.entries_mut().iter_mut().filter(|e| e.kind.learnable()) {
            if e.tensor.grad().is_some() {
                e.tensor.grad_mut().iter_mut().for_each(|g| *g *= k);
            }
        }
    }
    norm
}

/// One AdamW update from the gradients held in `store`. Weight decay is
/// decoupled (`p -= lr * wd * p`, before the Adam step) and applies to conv
/// weights only; biases and norm affines are not decayed. Entries without a
/// gradient are left untouched.
pub fn adamw_step<T: Float>(store: &mut ParamStore<T>, state: &mut AdamState<T>, lr: f64, cfg: &AdamConfig) {
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::c(cfg.beta1);
    let b2 = T::c(cfg.beta2);
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let lr_t = T::c(lr);
    let eps = T::c(cfg.eps);
    let decay = T::c(lr * cfg.weight_decay);
    store
        .entries_mut()
        .par_iter_mut()
        .zip(state.m.par_iter_mut())
        .zip(state.v.par_iter_mut())
        .filter(|((e, _), _)| e.kind.learnable())
        .for_each(|((e, m), v)| {
            let Some(grad) = e.tensor.grad().map(<[T]>::to_vec) else {
                return;
            };
            let decays = e.kind.decays();
            for (((p, &g), m), v) in e.tensor.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                if decays {
                    *p = *p - decay * *p;
                }
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p = *p - lr_t * mhat / (vhat.sqrt() + eps);
            }
        });
}
