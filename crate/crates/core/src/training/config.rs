use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorgrad::AdamConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::config(format!("precision must be f32 or f64, got {other:?}"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

/// Training objective. `Bce` is plain binary cross-entropy on logits and
/// serves as a reference for the focal loss at γ = 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Focal,
    Bce,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs_max: usize,
    pub batch_size: usize,
    pub gamma_focal: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
    pub precision: Precision,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs_max: 50,
            batch_size: 32,
            gamma_focal: 2.0,
            patience: 10,
            min_delta: 1e-4,
            seed: 0,
            precision: Precision::F32,
            loss: LossKind::Focal,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.patience < 1 {
            return Err(Error::config("patience must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::config(format!(
                "batch size must be at least 2 for batch norm, got {}",
                self.batch_size
            )));
        }
        if self.epochs_max < 1 {
            return Err(Error::config("epochs_max must be at least 1"));
        }
        if !(self.gamma_focal >= 0.0 && self.gamma_focal.is_finite()) {
            return Err(Error::config(format!("focal gamma must be >= 0, got {}", self.gamma_focal)));
        }
        if !(self.min_delta >= 0.0 && self.min_delta.is_finite()) {
            return Err(Error::config(format!("min_delta must be >= 0, got {}", self.min_delta)));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}
