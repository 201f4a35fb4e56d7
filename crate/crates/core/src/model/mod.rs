//! The gated U-Net: configuration, parameter storage, layers and assembly.

pub mod block;
pub mod config;
pub mod fusion;
pub mod gunet;
pub mod layers;
pub mod params;

pub use block::{ChannelAttention, GConvBlock};
pub use config::{
    Attention, FusionKind, GateKind, ModelConfig, NormKind, Nonlinearity, StageSpec, PRESETS,
};
pub use fusion::{Fusion, FusionOp};
pub use gunet::{build_gunet, Gunet, GunetCache};
pub use layers::{Builder, ConvLayer, Ctx, NormLayer};
pub use params::{ParamEntry, ParamId, ParamKind, ParamStore};
