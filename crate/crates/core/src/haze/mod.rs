//! Haze synthesis, analytic inversion, procedural datasets and metrics.

pub mod dataset;
pub mod image_io;
pub mod metrics;
pub mod sim;

pub use dataset::{generate_dataset, generate_pair, load_dataset, save_dataset, DepthKind, ImagePair};
pub use image_io::{read_image, side_by_side, write_image};
pub use metrics::{batch_psnr, mse, psnr, ssim, PSNR_CAP};
pub use sim::{invert_haze, synthesize_haze, HazeParams, DEFAULT_T_FLOOR, DEPTH_MAX};
