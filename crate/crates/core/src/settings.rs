//! Run configuration files: TOML with `[model]`, `[train]` and `[data]`
//! sections.
//!
//! ```toml
//! [model]
//! preset = "T"        # optional; other keys override the preset
//! dw_kernel = 7
//!
//! [train]
//! epochs = 40
//! ghost_norm_size = "full"
//!
//! [data]
//! dir = "data/train"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::haze::DepthKind;
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// Where training data comes from: a directory written by `synth`, or (when
/// `dir` is absent) pairs generated in memory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub dir: Option<PathBuf>,
    pub n: usize,
    pub size: usize,
    pub seed: u64,
    pub depth_kind: DepthKind,
    /// Held-out pairs taken from the end of the dataset.
    pub val_count: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: None,
            n: 200,
            size: 64,
            seed: 0,
            depth_kind: DepthKind::Mixed,
            val_count: 40,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

fn parse_err(e: impl std::fmt::Display) -> Error {
    Error::config(e.to_string())
}

/// Expands `model.preset` into the preset's fields, with explicit keys
/// taking precedence.
fn expand_preset(root: &mut Table) -> Result<()> {
    let Some(Value::Table(model)) = root.get_mut("model") else {
        return Ok(());
    };
    let Some(preset) = model.remove("preset") else {
        return Ok(());
    };
    let name = preset
        .as_str()
        .ok_or_else(|| Error::config("model.preset must be a string"))?;
    let Value::Table(mut base) = Value::try_from(ModelConfig::preset(name)?).map_err(parse_err)? else {
        unreachable!("a struct serializes to a table");
    };
    for (k, v) in std::mem::take(model) {
        base.insert(k, v);
    }
    *model = base;
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut root: Table = text.parse().map_err(parse_err)?;
        expand_preset(&mut root)?;
        let cfg: RunConfig = Value::Table(root).try_into().map_err(parse_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data.dir.is_none() && self.data.val_count >= self.data.n {
            return Err(Error::config(format!(
                "val_count ({}) leaves no training pairs out of {}",
                self.data.val_count, self.data.n
            )));
        }
        Ok(())
    }

    /// Applies `section.key=value`. The value is read as a TOML literal,
    /// falling back to a bare string (so `train.ghost_norm_size=full` works).
    /// Only types are checked; cross-field rules wait for [`RunConfig::validate`],
    /// so overrides can be applied in any order.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("expected section.key=value, got `{assignment}`")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::config(format!("expected section.key, got `{path}`")))?;
        let raw = raw.trim();
        let value = format!("v = {raw}")
            .parse::<Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        let Value::Table(mut root) = Value::try_from(&*self).map_err(parse_err)? else {
            unreachable!("a struct serializes to a table");
        };
        match root.get_mut(section) {
            Some(Value::Table(t)) => {
                t.insert(key.to_string(), value);
            }
            _ => return Err(Error::config(format!("unknown section `{section}`"))),
        }
        *self = Value::Table(root).try_into().map_err(parse_err)?;
        Ok(())
    }
}
