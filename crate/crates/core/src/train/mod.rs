//! Training: configuration, learning-rate schedule, AdamW, the loop itself
//! and checkpoint files.

pub mod checkpoint;
pub mod config;
pub mod optim;
pub mod trainer;

pub use checkpoint::{checkpoint_config, load_checkpoint, save_checkpoint};
pub use config::TrainConfig;
pub use optim::{adamw_step, clip_grad_norm, lr_at, lr_schedule, AdamConfig, AdamState};
pub use trainer::{
    evaluate, hazy_baseline, sample_batch, train_loop, train_step, MetricsRow, TrainOptions,
    TrainOutcome, METRICS_HEADER,
};
