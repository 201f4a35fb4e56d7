//! Declarative description of a gated U-Net variant.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ops::{Activation, Padding};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Batch,
    Layer,
    Instance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    Sigmoid,
    HardSigmoid,
    Tanh,
}

impl GateKind {
    pub fn activation(self) -> Activation {
        match self {
            GateKind::Sigmoid => Activation::Sigmoid,
            GateKind::HardSigmoid => Activation::HardSigmoid,
            GateKind::Tanh => Activation::Tanh,
        }
    }
}

/// How the two parallel branches of a block are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    /// `gate(PW1) * DW(PW2)`.
    Gating,
    /// `relu(PW1) + DW(PW2)`.
    ReluSum,
    /// `gelu(PW1) + DW(PW2)`.
    GeluSum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    Sk,
    Concat,
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attention {
    None,
    Se,
    Eca,
}

/// One resolution level of the U-Net.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageSpec {
    pub width: usize,
    pub blocks: usize,
    /// Downsampling factor relative to the input (1, 2, 4, ...).
    pub scale: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub base_blocks: usize,
    pub base_width: usize,
    pub dw_kernel: usize,
    pub n_stages: usize,
    pub norm_kind: NormKind,
    pub gate_kind: GateKind,
    pub nonlin_ablation: Nonlinearity,
    pub fusion_kind: FusionKind,
    pub extra_attention: Attention,
    pub width_multiplier: f64,
    pub padding: Padding,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::preset("T").expect("T preset")
    }
}

pub const PRESETS: [&str; 4] = ["T", "S", "B", "D"];

/// Hidden width of the SK-fusion MLP and the SE bottleneck.
pub const ATTN_REDUCTION: usize = 8;
pub const ATTN_MIN_HIDDEN: usize = 4;

pub fn reduced_width(channels: usize) -> usize {
    (channels / ATTN_REDUCTION).max(ATTN_MIN_HIDDEN)
}

/// ECA kernel length from the adaptive rule `|log2(C)/2 + 1/2|`, made odd.
pub fn eca_kernel(channels: usize) -> usize {
    let t = (((channels as f64).log2() + 1.0) / 2.0).abs() as usize;
    if t % 2 == 1 {
        t
    } else {
        t + 1
    }
}

impl ModelConfig {
    /// T/S/B/D: `M` in {2, 4, 8, 16}, `N = 24`, `k = 5`, 7 stages.
    pub fn preset(name: &str) -> Result<Self> {
        let m = match name.to_ascii_uppercase().as_str() {
            "T" => 2,
            "S" => 4,
            "B" => 8,
            "D" => 16,
            _ => {
                return Err(Error::config(format!(
                    "unknown preset `{name}`; valid presets are {}",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(Self {
            base_blocks: m,
            base_width: 24,
            dw_kernel: 5,
            n_stages: 7,
            norm_kind: NormKind::Batch,
            gate_kind: GateKind::Sigmoid,
            nonlin_ablation: Nonlinearity::Gating,
            fusion_kind: FusionKind::Sk,
            extra_attention: Attention::None,
            width_multiplier: 1.0,
            padding: Padding::Reflect,
        })
    }

    /// Small model used by the end-to-end gradient check and toy training.
    pub fn micro(base_width: usize, base_blocks: usize) -> Self {
        Self {
            base_blocks,
            base_width,
            n_stages: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_blocks == 0 || self.base_width == 0 {
            return Err(Error::config("base blocks and base width must be positive"));
        }
        if self.dw_kernel % 2 == 0 {
            return Err(Error::config(format!(
                "depthwise kernel {} must be odd",
                self.dw_kernel
            )));
        }
        if self.n_stages < 3 || self.n_stages % 2 == 0 {
            return Err(Error::config(format!(
                "stage count {} must be odd and at least 3",
                self.n_stages
            )));
        }
        if !(self.width_multiplier.is_finite() && self.width_multiplier > 0.0) {
            return Err(Error::config("width multiplier must be positive"));
        }
        if self.stages().iter().any(|s| s.width == 0) {
            return Err(Error::config("width multiplier rounds a stage to zero channels"));
        }
        Ok(())
    }

    /// Encoder levels below the bottleneck.
    pub fn half(&self) -> usize {
        self.n_stages / 2
    }

    /// Input sizes must be multiples of this (the network pads otherwise).
    pub fn size_multiple(&self) -> usize {
        1 << self.half()
    }

    fn level_width(&self, level: usize) -> usize {
        let base = (self.base_width << level) as f64;
        if self.width_multiplier == 1.0 {
            return base as usize;
        }
        // Nearest even integer.
        ((base * self.width_multiplier / 2.0).round() * 2.0) as usize
    }

    /// Per-stage widths and depths: `{N, 2N, .., 2^h N, .., 2N, N}` with `M`
    /// blocks everywhere except `2M` at the bottleneck.
    pub fn stages(&self) -> Vec<StageSpec> {
        let h = self.half();
        (0..self.n_stages)
            .map(|i| {
                let level = if i <= h { i } else { 2 * h - i };
                StageSpec {
                    width: self.level_width(level),
                    blocks: if level == h {
                        2 * self.base_blocks
                    } else {
                        self.base_blocks
                    },
                    scale: 1 << level,
                }
            })
            .collect()
    }

    pub fn level_widths(&self) -> Vec<usize> {
        (0..=self.half()).map(|l| self.level_width(l)).collect()
    }

    /// Applies `key=value` overrides, e.g. `fusion=sum`, `k=3`, `stages=5`.
    pub fn apply_ablation(&mut self, spec: &str) -> Result<()> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::config(format!("ablation `{spec}` is not key=value")))?;
        let (key, value) = (key.trim(), value.trim());
        let bad = || Error::config(format!("invalid value `{value}` for ablation `{key}`"));
        match key {
            "fusion" | "fusion_kind" => {
                self.fusion_kind = match value {
                    "sk" => FusionKind::Sk,
                    "concat" | "cat" => FusionKind::Concat,
                    "sum" => FusionKind::Sum,
                    _ => return Err(bad()),
                }
            }
            "norm" | "norm_kind" => {
                self.norm_kind = match value {
                    "batch" | "bn" => NormKind::Batch,
                    "layer" | "ln" => NormKind::Layer,
                    "instance" | "in" => NormKind::Instance,
                    _ => return Err(bad()),
                }
            }
            "gate" | "gate_kind" => {
                self.gate_kind = match value {
                    "sigmoid" => GateKind::Sigmoid,
                    "hard_sigmoid" | "hardsigmoid" => GateKind::HardSigmoid,
                    "tanh" => GateKind::Tanh,
                    _ => return Err(bad()),
                }
            }
            "nonlin" | "nonlin_ablation" => {
                self.nonlin_ablation = match value {
                    "gating" => Nonlinearity::Gating,
                    "relu" | "relu_sum" => Nonlinearity::ReluSum,
                    "gelu" | "gelu_sum" => Nonlinearity::GeluSum,
                    _ => return Err(bad()),
                }
            }
            "attention" | "extra_attention" => {
                self.extra_attention = match value {
                    "none" => Attention::None,
                    "se" => Attention::Se,
                    "eca" => Attention::Eca,
                    _ => return Err(bad()),
                }
            }
            "k" | "dw_kernel" => self.dw_kernel = value.parse().map_err(|_| bad())?,
            "stages" | "n_stages" => self.n_stages = value.parse().map_err(|_| bad())?,
            "m" | "M" | "base_blocks" => self.base_blocks = value.parse().map_err(|_| bad())?,
            "n" | "N" | "base_width" => self.base_width = value.parse().map_err(|_| bad())?,
            "width" | "width_multiplier" => {
                self.width_multiplier = match value {
                    "sqrt2" => std::f64::consts::SQRT_2,
                    v => v.parse().map_err(|_| bad())?,
                }
            }
            "depth" => {
                let f: usize = value.parse().map_err(|_| bad())?;
                self.base_blocks *= f;
            }
            "padding" => {
                self.padding = match value {
                    "reflect" => Padding::Reflect,
                    "zero" => Padding::Zero,
                    _ => return Err(bad()),
                }
            }
            _ => return Err(Error::config(format!("unknown ablation key `{key}`"))),
        }
        self.validate()
    }

    /// Stable text form used for fingerprints and config snapshots.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical form.
    pub fn fingerprint(&self) -> [u8; 32] {
        Sha256::digest(self.canonical_json().as_bytes()).into()
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
