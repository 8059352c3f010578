use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lanerisk::dataset::WINDOW;
use lanerisk::lanegen::{velocity_grid, LaneChangeGeometry};
use lanerisk::neuralnet::{ModelConfig, TrainConfig};
use lanerisk::simulator::SimConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub v_min: f64,
    pub v_max: f64,
    pub v_step: f64,
    /// Path sampling time (s).
    pub dt: f64,
    pub window: usize,
    pub train_ratio: f64,
    /// Shuffle seed for the train/test split.
    pub seed: u64,
    pub geometry: LaneChangeGeometry,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            v_min: 10.0,
            v_max: 40.0,
            v_step: 0.1,
            dt: 0.1,
            window: WINDOW,
            train_ratio: 0.6,
            seed: 7,
            geometry: LaneChangeGeometry::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/weights.bin`.
    pub weights: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { data_dir: "data".into(), out_dir: "out".into(), weights: None }
    }
}

/// Everything a run needs; parsed from TOML, then overridden by flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sim: SimConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn weights_path(&self) -> PathBuf {
        self.paths.weights.clone().unwrap_or_else(|| self.paths.out_dir.join("weights.bin"))
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        velocity_grid(c.v_min, c.v_max, c.v_step).context("corpus")?;
        if !(c.v_min > 0.0) || !(c.dt > 0.0) {
            bail!("corpus: speeds and sampling time must be positive");
        }
        if c.window != WINDOW {
            bail!("corpus: window must be {WINDOW} (the network history length), got {}", c.window);
        }
        if !(c.train_ratio > 0.0 && c.train_ratio < 1.0) {
            bail!("corpus: train_ratio must lie in (0, 1), got {}", c.train_ratio);
        }
        c.geometry.validate().context("corpus.geometry")?;
        let m = &self.model;
        if m.encoder_hidden == 0 || m.latent == 0 || m.decoder_hidden == 0 {
            bail!("model: layer sizes must be positive");
        }
        self.train.validate().context("train")?;
        self.sim.validate().context("sim")?;
        if (self.sim.data_dt - c.dt).abs() > 1e-12 {
            bail!("sim.data_dt ({}) must equal corpus.dt ({})", self.sim.data_dt, c.dt);
        }
        Ok(())
    }
}
