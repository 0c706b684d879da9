//! Flat `key = value` run configuration shared by every command.
//!
//! Unknown and duplicate keys are errors: a typo in a config file must not
//! silently fall back to a default. The bounding box is optional as a
//! group; commands that need one fail with a clear message instead of
//! guessing.

use std::collections::HashSet;
use std::path::Path;
use std::str::FromStr;

use crate::ddbm::BridgeSchedule;
use crate::error::{Error, Result};
use crate::ranking::LossWeights;
use crate::sam::{PreEncoderKind, SamConfig};
use crate::traj::BoundingBox;

/// How the distance-to-similarity temperature tau is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauMode {
    /// Mean off-diagonal distance of the training submatrix.
    MeanDistance,
    /// The literal `loss.tau_value`.
    Fixed,
}

impl FromStr for TauMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<TauMode> {
        match s {
            "mean_distance" => Ok(TauMode::MeanDistance),
            "fixed" => Ok(TauMode::Fixed),
            other => Err(Error::Config(format!(
                "unknown tau mode '{other}' (expected mean_distance or fixed)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub lon_min: Option<f64>,
    pub lon_max: Option<f64>,
    pub lat_min: Option<f64>,
    pub lat_max: Option<f64>,
    pub cell_size: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub split_seed: u64,
    pub d: usize,
    pub d_hid: Option<usize>,
    pub layers: usize,
    pub heads: usize,
    pub epsilon: f64,
    pub pre_encoder: PreEncoderKind,
    pub beta_min: f64,
    pub beta_max: f64,
    pub resample_len: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub pretrain_epochs: usize,
    pub pretrain_patience: usize,
    pub gamma1: f64,
    pub gamma2: f64,
    pub tau_mode: TauMode,
    pub tau_value: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub finetune_epochs: usize,
    pub finetune_patience: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            lon_min: None,
            lon_max: None,
            lat_min: None,
            lat_max: None,
            cell_size: 100.0,
            min_len: 20,
            max_len: 200,
            split_seed: 0,
            d: 64,
            d_hid: None,
            layers: 1,
            heads: 16,
            epsilon: 0.5,
            pre_encoder: PreEncoderKind::Linear,
            beta_min: 0.1,
            beta_max: 20.0,
            resample_len: 64,
            t_min: 0.01,
            t_max: 0.99,
            pretrain_epochs: 20,
            pretrain_patience: 5,
            gamma1: 0.1,
            gamma2: 0.001,
            tau_mode: TauMode::MeanDistance,
            tau_value: 1.0,
            batch_size: 128,
            lr: 0.001,
            finetune_epochs: 30,
            finetune_patience: 10,
            seed: 0,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value.parse().map_err(|_| {
        Error::Config(format!(
            "line {line}: cannot parse '{value}' for key '{key}'"
        ))
    })
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {line}: expected 'key = value', got '{trimmed}'"))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!(
                    "line {line}: duplicate key '{key}'"
                )));
            }
            cfg.set(key, value, line)?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        match key {
            "bbox.lon_min" => self.lon_min = Some(parse_value(key, value, line)?),
            "bbox.lon_max" => self.lon_max = Some(parse_value(key, value, line)?),
            "bbox.lat_min" => self.lat_min = Some(parse_value(key, value, line)?),
            "bbox.lat_max" => self.lat_max = Some(parse_value(key, value, line)?),
            "grid.cell_size" => self.cell_size = parse_value(key, value, line)?,
            "filter.min_len" => self.min_len = parse_value(key, value, line)?,
            "filter.max_len" => self.max_len = parse_value(key, value, line)?,
            "split.seed" => self.split_seed = parse_value(key, value, line)?,
            "model.d" => self.d = parse_value(key, value, line)?,
            "model.d_hid" => self.d_hid = Some(parse_value(key, value, line)?),
            "model.layers" => self.layers = parse_value(key, value, line)?,
            "model.heads" => self.heads = parse_value(key, value, line)?,
            "model.epsilon" => self.epsilon = parse_value(key, value, line)?,
            "model.pre_encoder" => {
                self.pre_encoder = value.parse().map_err(|e: Error| {
                    Error::Config(format!("line {line}: {e}"))
                })?
            }
            "ddbm.beta_min" => self.beta_min = parse_value(key, value, line)?,
            "ddbm.beta_max" => self.beta_max = parse_value(key, value, line)?,
            "ddbm.resample_len" => self.resample_len = parse_value(key, value, line)?,
            "ddbm.t_min" => self.t_min = parse_value(key, value, line)?,
            "ddbm.t_max" => self.t_max = parse_value(key, value, line)?,
            "pretrain.epochs" => self.pretrain_epochs = parse_value(key, value, line)?,
            "pretrain.patience" => self.pretrain_patience = parse_value(key, value, line)?,
            "loss.gamma1" => self.gamma1 = parse_value(key, value, line)?,
            "loss.gamma2" => self.gamma2 = parse_value(key, value, line)?,
            "loss.tau_mode" => {
                self.tau_mode = value.parse().map_err(|e: Error| {
                    Error::Config(format!("line {line}: {e}"))
                })?
            }
            "loss.tau_value" => self.tau_value = parse_value(key, value, line)?,
            "train.batch_size" => self.batch_size = parse_value(key, value, line)?,
            "train.lr" => self.lr = parse_value(key, value, line)?,
            "finetune.epochs" => self.finetune_epochs = parse_value(key, value, line)?,
            "finetune.patience" => self.finetune_patience = parse_value(key, value, line)?,
            "seed" => self.seed = parse_value(key, value, line)?,
            other => {
                return Err(Error::Config(format!(
                    "line {line}: unknown config key '{other}'"
                )))
            }
        }
        Ok(())
    }

    /// The model hyperparameters; the hidden width defaults to 4d.
    pub fn sam_config(&self) -> SamConfig {
        SamConfig {
            d: self.d,
            d_hid: self.d_hid.unwrap_or(4 * self.d),
            layers: self.layers,
            heads: self.heads,
            epsilon: self.epsilon,
            pre_encoder: self.pre_encoder,
        }
    }

    pub fn bridge_schedule(&self) -> Result<BridgeSchedule> {
        BridgeSchedule::new(self.beta_min, self.beta_max)
    }

    pub fn loss_weights(&self) -> Result<LossWeights> {
        LossWeights::new(self.gamma1, self.gamma2)
    }

    /// The configured geographic bounds; an error names the missing keys.
    pub fn bounding_box(&self) -> Result<BoundingBox> {
        match (self.lon_min, self.lon_max, self.lat_min, self.lat_max) {
            (Some(a), Some(b), Some(c), Some(d)) => BoundingBox::new(a, b, c, d),
            _ => {
                let missing: Vec<&str> = [
                    ("bbox.lon_min", self.lon_min),
                    ("bbox.lon_max", self.lon_max),
                    ("bbox.lat_min", self.lat_min),
                    ("bbox.lat_max", self.lat_max),
                ]
                .iter()
                .filter(|(_, v)| v.is_none())
                .map(|(k, _)| *k)
                .collect();
                Err(Error::Config(format!(
                    "config is missing {}",
                    missing.join(", ")
                )))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sam_config().validate()?;
        self.bridge_schedule()?;
        self.loss_weights()?;
        let have_bbox = [self.lon_min, self.lon_max, self.lat_min, self.lat_max]
            .iter()
            .filter(|v| v.is_some())
            .count();
        if have_bbox != 0 {
            self.bounding_box()?;
        }
        if !self.cell_size.is_finite() || self.cell_size <= 0.0 {
            return Err(Error::Config(format!(
                "grid.cell_size must be positive, got {}",
                self.cell_size
            )));
        }
        if self.min_len < 2 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "length filter needs 2 <= min <= max, got [{}, {}]",
                self.min_len, self.max_len
            )));
        }
        if self.resample_len < 2 {
            return Err(Error::Config(format!(
                "ddbm.resample_len must be at least 2, got {}",
                self.resample_len
            )));
        }
        if !(0.0 < self.t_min && self.t_min < self.t_max && self.t_max < 1.0) {
            return Err(Error::Config(format!(
                "bridge time range ({}, {}) must sit strictly inside (0, 1)",
                self.t_min, self.t_max
            )));
        }
        if self.tau_mode == TauMode::Fixed && (!self.tau_value.is_finite() || self.tau_value <= 0.0)
        {
            return Err(Error::Config(format!(
                "loss.tau_value must be positive, got {}",
                self.tau_value
            )));
        }
        if self.batch_size < 3 {
            return Err(Error::Config(format!(
                "train.batch_size must be at least 3 (each query needs 2 candidates), got {}",
                self.batch_size
            )));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::Config(format!(
                "train.lr must be positive, got {}",
                self.lr
            )));
        }
        for (name, v) in [
            ("pretrain.epochs", self.pretrain_epochs),
            ("finetune.epochs", self.finetune_epochs),
            ("pretrain.patience", self.pretrain_patience),
            ("finetune.patience", self.finetune_patience),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}
