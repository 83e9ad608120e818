//! Pipeline configuration, read from a TOML key-value file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crossflow_core::graph::{IdfMode, DEFAULT_WINDOW};
use crossflow_core::model::{ModelConfig, Reduction, TrainConfig, WeightScheme};
use crossflow_core::paths::{PathBounds, PathOptions};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One binary detector per exploit class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Detector {
    AccessControl,
    FlashLoan,
}

impl Detector {
    pub const ALL: [Detector; 2] = [Detector::AccessControl, Detector::FlashLoan];

    pub fn name(self) -> &'static str {
        match self {
            Detector::AccessControl => "access-control",
            Detector::FlashLoan => "flash-loan",
        }
    }

    /// Binary target of a protocol label for this detector.
    pub fn target(self, label: Label) -> usize {
        usize::from(label == Label::from(self))
    }
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Detector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Detector::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| format!("unknown detector `{s}` (expected access-control or flash-loan)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Benign,
    AccessControl,
    FlashLoan,
}

impl From<Detector> for Label {
    fn from(d: Detector) -> Label {
        match d {
            Detector::AccessControl => Label::AccessControl,
            Detector::FlashLoan => Label::FlashLoan,
        }
    }
}

/// Optimizer and schedule settings. Seed, truncation and λ live on
/// [`PipelineConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub lr_encoder: f64,
    pub lr_gcn: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weights: WeightScheme,
    pub normalize_weights: bool,
    pub reduction: Reduction,
    pub stop_at_perfect: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSettings {
            lr_encoder: t.lr_encoder,
            lr_gcn: t.lr_gcn,
            dropout: t.dropout,
            batch_size: t.batch_size,
            epochs: t.epochs,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            weights: t.weights,
            normalize_weights: t.normalize_weights,
            reduction: t.reduction,
            stop_at_perfect: t.stop_at_perfect,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub bounds: PathBounds,
    /// PPMI sliding window.
    pub window: usize,
    pub idf: IdfMode,
    /// Tokens kept per path, summary token included.
    pub truncation: usize,
    pub lambda: f64,
    /// Skip cross-contract linking.
    pub no_link: bool,
    /// Keep every enumerated path, feasible or not.
    pub no_validate: bool,
    pub resolve_dynamic_jumps: bool,
    pub seed: u64,
    /// Checkpoint file per detector, relative to the config file.
    pub checkpoints: BTreeMap<Detector, PathBuf>,
    pub model: ModelConfig,
    pub train: TrainSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        PipelineConfig {
            bounds: PathBounds::default(),
            window: DEFAULT_WINDOW,
            idf: IdfMode::Raw,
            truncation: t.truncation,
            lambda: t.lambda,
            no_link: false,
            no_validate: false,
            resolve_dynamic_jumps: true,
            seed: t.seed,
            checkpoints: BTreeMap::new(),
            model: ModelConfig::default(),
            train: TrainSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<PipelineConfig, String> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file; checkpoint paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let mut cfg =
            PipelineConfig::from_toml(&text).map_err(|message| Error::Config { path: path.into(), message })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in cfg.checkpoints.values_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.window < 2 {
            return Err("window must be at least 2".into());
        }
        if self.bounds.max_block_visits == 0 || self.bounds.max_path_length == 0 {
            return Err("path bounds must be positive".into());
        }
        self.train_config().validate().map_err(|e| e.to_string())?;
        self.model.validate().map_err(|e| e.to_string())?;
        if self.truncation > self.model.max_len {
            return Err(format!("truncation {} exceeds model max_len {}", self.truncation, self.model.max_len));
        }
        Ok(())
    }

    pub fn path_options(&self) -> PathOptions {
        PathOptions { bounds: self.bounds, resolve_dynamic_jumps: self.resolve_dynamic_jumps }
    }

    pub fn train_config(&self) -> TrainConfig {
        let s = &self.train;
        TrainConfig {
            lr_encoder: s.lr_encoder,
            lr_gcn: s.lr_gcn,
            dropout: s.dropout,
            batch_size: s.batch_size,
            lambda: self.lambda,
            epochs: s.epochs,
            seed: self.seed,
            truncation: self.truncation,
            beta1: s.beta1,
            beta2: s.beta2,
            eps: s.eps,
            weights: s.weights,
            normalize_weights: s.normalize_weights,
            reduction: s.reduction,
            stop_at_perfect: s.stop_at_perfect,
        }
    }
}
