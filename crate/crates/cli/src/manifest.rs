//! `run.toml`: what a training run was asked to do and what it produced.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use gunet::settings::RunConfig;
use gunet::train::TrainOutcome;
use gunet::Error;
use serde::Serialize;

pub const FILE_NAME: &str = "run.toml";

#[derive(Debug, Serialize)]
pub struct Outputs {
    pub metrics: PathBuf,
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
}

#[derive(Debug, Default, Serialize)]
pub struct Results {
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hazy_psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_val_psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    pub steps: usize,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    /// Seconds since the Unix epoch.
    pub started: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finished: Option<u64>,
    pub outputs: Outputs,
    pub results: Results,
    pub config: RunConfig,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn start(config: &RunConfig, out: &Path) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.train.seed,
            started: now(),
            finished: None,
            outputs: Outputs {
                metrics: out.join("metrics.csv"),
                best_checkpoint: out.join("best.gunt"),
                last_checkpoint: out.join("last.gunt"),
            },
            results: Results {
                status: "running".into(),
                ..Results::default()
            },
            config: config.clone(),
        }
    }

    pub fn record<T>(&mut self, hazy_psnr: Option<f64>, outcome: &TrainOutcome<T>) {
        self.results.hazy_psnr = hazy_psnr;
        self.results.final_val_psnr = outcome.log.last().map(|r| r.val_psnr).filter(|v| v.is_finite());
        self.results.best_epoch = outcome.best_epoch;
        self.results.steps = outcome.step_losses.len();
    }

    pub fn finish(&mut self, error: Option<&Error>) {
        self.finished = Some(now());
        self.results.status = if error.is_some() { "failed" } else { "completed" }.into();
        self.results.error = error.map(ToString::to_string);
    }

    /// Writes `run.toml` atomically.
    pub fn save(&self, dir: &Path) -> Result<(), Error> {
        let text = toml::to_string(self).expect("manifest serializes");
        let path = dir.join(FILE_NAME);
        let tmp = dir.join(format!("{FILE_NAME}.tmp"));
        let io = |p: &Path, source| Error::Io {
            path: p.to_path_buf(),
            source,
        };
        fs::write(&tmp, text).map_err(|e| io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| io(&path, e))
    }
}
