//! Analytic parameter and multiply-accumulate (MAC) counts.
//!
//! Counting conventions:
//!
//! * Convolutions: `out_elements * (in_ch / groups) * k^2` MACs. The bias add
//!   is the accumulator's initial value, so it adds no MACs of its own.
//! * Inference batch norm: one multiply-add per element (a fixed affine map).
//! * Layer/instance norm compute statistics at inference: 4 ops per element
//!   (mean, variance, normalize, affine) plus 3 per statistics group (a square
//!   root counts as two multiplies, plus one reciprocal).
//! * Activations are free. Elementwise products and sums cost one op per
//!   element. Global average pooling costs one add per input element;
//!   softmax costs 3 ops per logit.
//! * Pixel (un)shuffle and padding are free.
//!
//! Counts use the padded resolution the network actually runs at.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::config::{
    eca_kernel, reduced_width, Attention, FusionKind, ModelConfig, NormKind,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostRow {
    pub layer: String,
    pub params: u64,
    pub macs: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub resolution: (usize, usize),
}

impl CostReport {
    pub fn total_params(&self) -> u64 {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn total_macs(&self) -> u64 {
        self.rows.iter().map(|r| r.macs).sum()
    }

    fn push(&mut self, layer: impl Into<String>, params: u64, macs: u64) {
        self.rows.push(CostRow {
            layer: layer.into(),
            params,
            macs,
        });
    }

    /// Pointwise or spatial convolution at `hw` output pixels.
    fn conv(&mut self, layer: String, cin: usize, cout: usize, k: usize, groups: usize, hw: u64) {
        let w = (cout * (cin / groups) * k * k) as u64;
        self.push(layer, w + cout as u64, hw * w);
    }
}

/// Exact learnable-element count of the network described by `config`.
pub fn count_params(config: &ModelConfig) -> Result<u64> {
    Ok(cost_report(config, (256, 256))?.total_params())
}

/// MACs of one forward pass on an `h x w` image.
pub fn count_macs(config: &ModelConfig, resolution: (usize, usize)) -> Result<u64> {
    Ok(cost_report(config, resolution)?.total_macs())
}

fn norm_cost(report: &mut CostReport, name: String, kind: NormKind, c: usize, hw: u64) {
    let elems = c as u64 * hw;
    let macs = match kind {
        NormKind::Batch => elems,
        NormKind::Layer => 4 * elems + 3,
        NormKind::Instance => 4 * elems + 3 * c as u64,
    };
    report.push(name, 2 * c as u64, macs);
}

fn block_cost(report: &mut CostReport, name: &str, c: usize, hw: u64, cfg: &ModelConfig) {
    let elems = c as u64 * hw;
    norm_cost(report, format!("{name}.norm"), cfg.norm_kind, c, hw);
    report.conv(format!("{name}.pw1"), c, c, 1, 1, hw);
    report.conv(format!("{name}.pw2"), c, c, 1, 1, hw);
    report.conv(format!("{name}.dw"), c, c, cfg.dw_kernel, c, hw);
    report.push(format!("{name}.combine"), 0, elems);
    report.conv(format!("{name}.pw3"), c, c, 1, 1, hw);
    match cfg.extra_attention {
        Attention::None => {}
        Attention::Se => {
            let d = reduced_width(c);
            report.push(format!("{name}.se_pool"), 0, elems);
            report.conv(format!("{name}.se_reduce"), c, d, 1, 1, 1);
            report.conv(format!("{name}.se_expand"), d, c, 1, 1, 1);
            report.push(format!("{name}.se_scale"), 0, elems);
        }
        Attention::Eca => {
            let k = eca_kernel(c);
            report.push(format!("{name}.eca_pool"), 0, elems);
            report.push(format!("{name}.eca"), k as u64, (k * c) as u64);
            report.push(format!("{name}.eca_scale"), 0, elems);
        }
    }
    report.push(format!("{name}.residual"), 0, elems);
}

fn fusion_cost(report: &mut CostReport, name: &str, c: usize, hw: u64, kind: FusionKind) {
    let elems = c as u64 * hw;
    report.conv(format!("{name}.skip"), c, c, 1, 1, hw);
    match kind {
        FusionKind::Sk => {
            let d = reduced_width(c);
            report.push(format!("{name}.sum"), 0, elems);
            report.push(format!("{name}.pool"), 0, elems);
            report.conv(format!("{name}.mlp_reduce"), c, d, 1, 1, 1);
            report.conv(format!("{name}.mlp_expand"), d, 2 * c, 1, 1, 1);
            report.push(format!("{name}.softmax"), 0, 3 * 2 * c as u64);
            report.push(format!("{name}.weighted_sum"), 0, 2 * elems);
        }
        FusionKind::Concat => report.conv(format!("{name}.proj"), 2 * c, c, 1, 1, hw),
        FusionKind::Sum => report.push(format!("{name}.sum"), 0, elems),
    }
}

/// Per-layer cost table in forward order.
pub fn cost_report(config: &ModelConfig, resolution: (usize, usize)) -> Result<CostReport> {
    config.validate()?;
    let (h, w) = resolution;
    if h == 0 || w == 0 {
        return Err(Error::config("resolution must be positive"));
    }
    let m = config.size_multiple();
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    let widths = config.level_widths();
    let stages = config.stages();
    let half = config.half();
    let hw_at = |level: usize| ((ph >> level) * (pw >> level)) as u64;
    let full = hw_at(0);

    let mut r = CostReport {
        rows: Vec::new(),
        resolution: (h, w),
    };
    r.push("input_scale", 0, 3 * full);
    r.conv("stem".into(), 3, widths[0], 3, 1, full);
    for level in 0..half {
        for j in 0..stages[level].blocks {
            block_cost(&mut r, &format!("enc{level}.block{j}"), widths[level], hw_at(level), config);
        }
        r.conv(
            format!("down{level}"),
            4 * widths[level],
            widths[level + 1],
            1,
            1,
            hw_at(level + 1),
        );
    }
    for j in 0..stages[half].blocks {
        block_cost(&mut r, &format!("mid.block{j}"), widths[half], hw_at(half), config);
    }
    for level in (0..half).rev() {
        r.conv(
            format!("up{level}"),
            widths[level + 1],
            4 * widths[level],
            1,
            1,
            hw_at(level + 1),
        );
        fusion_cost(&mut r, &format!("fusion{level}"), widths[level], hw_at(level), config.fusion_kind);
        for j in 0..stages[2 * half - level].blocks {
            block_cost(&mut r, &format!("dec{level}.block{j}"), widths[level], hw_at(level), config);
        }
    }
    r.conv("head".into(), widths[0], 3, 3, 1, full);
    r.push("global_residual", 0, 3 * full);
    Ok(r)
}

/// Writes `layer,params,macs` rows followed by a `total` row.
pub fn emit_cost_csv(report: &CostReport, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    write_cost_csv(report, &mut out).expect("writing to a Vec cannot fail");
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_cost_csv(report: &CostReport, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "layer,params,macs")?;
    for row in &report.rows {
        writeln!(out, "{},{},{}", row.layer, row.params, row.macs)?;
    }
    writeln!(out, "total,{},{}", report.total_params(), report.total_macs())
}
