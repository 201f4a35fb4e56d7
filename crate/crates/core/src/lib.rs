//! Gated-convolution U-Net for single image dehazing.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`] and [`ops`]: dense 4-D tensors and differentiable kernels
//!   (convolution, normalization, activations, pooling, shuffles, loss).
//! * [`model`]: gConv blocks, skip fusion and the full network built from a
//!   [`model::ModelConfig`].
//! * [`cost`]: analytic parameter and multiply-accumulate counting.
//! * [`haze`]: atmospheric-scattering synthesis, inversion, datasets and
//!   PSNR/SSIM.
//! * [`train`]: learning-rate schedule, AdamW, training loop, checkpoints.
//! * [`gradcheck`]: central finite-difference checks of every backward pass.

pub mod cost;
pub mod error;
pub mod gradcheck;
pub mod haze;
pub mod model;
pub mod ops;
pub mod settings;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{DType, Float, Shape, Tensor};
