//! Dual-scale attention encoder.
//!
//! A trajectory enters twice: as normalized GPS coordinates and as
//! normalized grid-cell coordinates. Both are pre-encoded into d dimensions
//! ([`pre_encode`]), aligned by stacked dual attention layers ([`saa`],
//! [`dual_saa_layer`]), fused with a fixed weight and mean-pooled into a
//! single embedding ([`encode`]).

mod encoder;
mod features;

pub use encoder::{
    dual_saa_layer, encode, encode_on_tape, encode_sequence, init_params, lstm_step, pre_encode,
    saa, saa_core, validate_params, BoundParams,
};
pub use features::{gps_features, grid_features};

use std::str::FromStr;

use crate::error::{Error, Result};

/// Which pre-encoder maps the 2-channel features into d dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreEncoderKind {
    /// Single affine layer; used for SSPD and Hausdorff targets.
    Linear,
    /// One-layer LSTM over the sequence; used for the Frechet target.
    Lstm,
}

impl FromStr for PreEncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(PreEncoderKind::Linear),
            "lstm" => Ok(PreEncoderKind::Lstm),
            other => Err(Error::Config(format!(
                "unknown pre-encoder '{other}' (expected linear or lstm)"
            ))),
        }
    }
}

/// Encoder hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SamConfig {
    /// Embedding width.
    pub d: usize,
    /// Feed-forward hidden width.
    pub d_hid: usize,
    /// Number of dual attention layers.
    pub layers: usize,
    /// Attention heads; must divide `d`.
    pub heads: usize,
    /// GPS-branch weight in the final fusion, in (0, 1).
    pub epsilon: f64,
    pub pre_encoder: PreEncoderKind,
}

impl Default for SamConfig {
    fn default() -> Self {
        SamConfig {
            d: 64,
            d_hid: 256,
            layers: 1,
            heads: 16,
            epsilon: 0.5,
            pre_encoder: PreEncoderKind::Linear,
        }
    }
}

impl SamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::Config(format!(
                "model.d must be at least 2, got {}",
                self.d
            )));
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::Config(format!(
                "model.heads ({}) must divide model.d ({})",
                self.heads, self.d
            )));
        }
        if self.d_hid == 0 {
            return Err(Error::Config("model.d_hid must be positive".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("model.layers must be at least 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!(
                "model.epsilon must lie strictly in (0, 1), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }
}
