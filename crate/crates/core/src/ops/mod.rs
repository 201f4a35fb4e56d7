//! Forward and backward kernels. Every differentiable op comes as a
//! forward function plus an explicit backward that maps the upstream
//! gradient to gradients of its inputs and parameters.

pub mod activation;
pub mod conv;
pub mod loss;
pub mod norm;
pub mod shape_ops;

pub use activation::{gelu, hard_sigmoid, relu, sigmoid, tanh, Activation};
pub use conv::{conv2d, conv2d_backward, conv2d_raw, ConvGrads, ConvParams, ConvSpec, Padding};
pub use loss::{l1_loss, l1_loss_backward};
pub use norm::{
    batch_norm, batch_norm_backward, batch_norm_forward, fold_norm_into_conv, instance_norm,
    layer_norm, sample_norm_backward, sample_norm_forward, BnConfig, GhostSize, NormCache,
    NormMode, NormState, SampleNorm,
};
pub use shape_ops::{
    channel_conv1d, channel_conv1d_backward, channel_scale, channel_scale_backward,
    global_avg_pool, global_avg_pool_backward, pixel_shuffle, pixel_unshuffle,
    softmax_over_branches, softmax_over_branches_backward,
};
