use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::default_grid;
use crate::model::{ModelConfig, DEFAULT_THRESHOLD};
use crate::optflow::{ApexConfig, FarnebackParams};
use crate::pipeline::synth::SynthConfig;
use crate::training::{Precision, TrainConfig};

pub const CONFIG_FILE: &str = "config.json";

/// Which phase samples enter training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseMode {
    #[default]
    Both,
    OnsetOnly,
}

/// Everything a run depends on. `seed` drives the synthetic generator and
/// training; `train.seed` is overwritten with it on resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Dataset directory (holding `manifest.jsonl`) or manifest file.
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    /// Decision threshold for `eval`; the default threshold when unset.
    pub threshold: Option<f64>,
    pub sweep_grid: Vec<f64>,
    pub phases: PhaseMode,
    /// Training seeds averaged by `ablate`; just `seed` when empty.
    pub ablation_seeds: Vec<u64>,
    pub synth: SynthConfig,
    pub flow: FarnebackParams,
    pub apex: ApexConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: None,
            out: PathBuf::from("run"),
            threshold: None,
            sweep_grid: default_grid(),
            phases: PhaseMode::Both,
            ablation_seeds: Vec::new(),
            synth: SynthConfig::default(),
            flow: FarnebackParams::default(),
            apex: ApexConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Command-line values layered over the config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub threshold: Option<f64>,
    pub no_attention: bool,
    pub no_se: bool,
    pub input_side: Option<usize>,
    pub precision: Option<Precision>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        if let Some(p) = &o.data {
            self.data = Some(p.clone());
        }
        if let Some(t) = o.threshold {
            self.threshold = Some(t);
        }
        if o.no_attention {
            self.model.fusion_attention = false;
        }
        if o.no_se {
            self.model.se = false;
        }
        if let Some(s) = o.input_side {
            self.model.input_side = s;
        }
        if let Some(p) = o.precision {
            self.train.precision = p;
        }
    }

    /// Applies the seed rule and validates every section.
    pub fn resolve(mut self) -> Result<Self> {
        self.train.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.flow.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.sweep_grid.is_empty() || self.sweep_grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::config("sweep grid must be a non-empty list of thresholds in [0, 1]"));
        }
        if let Some(t) = self.threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::config(format!("threshold {t} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn threshold(&self) -> f64 {
        self.threshold.unwrap_or(DEFAULT_THRESHOLD)
    }

    pub fn training_seeds(&self) -> Vec<u64> {
        if self.ablation_seeds.is_empty() {
            vec![self.seed]
        } else {
            self.ablation_seeds.clone()
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("run config serializes");
        s.push('\n');
        s
    }

    /// Writes the resolved config into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join(CONFIG_FILE);
        std::fs::write(&p, self.to_json()).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }
}
