use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::NUM_CLASSES;

/// Network geometry and regularization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_side: usize,
    /// Stream channels after the first and second conv blocks.
    pub c1: usize,
    pub c2: usize,
    pub kernel: usize,
    pub se_reduction: usize,
    pub head_hidden: usize,
    pub p_conv: f64,
    pub p_head: f64,
    pub classes: usize,
    pub fusion_attention: bool,
    pub se: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_side: 224,
            c1: 16,
            c2: 32,
            kernel: 3,
            se_reduction: 4,
            head_hidden: 128,
            p_conv: 0.25,
            p_head: 0.5,
            classes: NUM_CLASSES,
            fusion_attention: true,
            se: true,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

/// Parameter totals per component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub streams: usize,
    pub attention: usize,
    pub se: usize,
    pub head: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.streams + self.attention + self.se + self.head
    }
}

impl ModelConfig {
    pub fn with_side(side: usize) -> Self {
        Self {
            input_side: side,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_side == 0 || !self.input_side.is_multiple_of(4) {
            return Err(Error::config(format!(
                "input side {} must be a positive multiple of 4",
                self.input_side
            )));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::config("kernel size must be odd"));
        }
        if self.c1 == 0 || self.c2 == 0 || self.head_hidden == 0 || self.classes == 0 {
            return Err(Error::config("layer widths must be positive"));
        }
        if self.se_reduction == 0 || !self.c2.is_multiple_of(self.se_reduction) {
            return Err(Error::config(format!(
                "SE reduction {} must divide c2 = {}",
                self.se_reduction, self.c2
            )));
        }
        for p in [self.p_conv, self.p_head] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config(format!("dropout probability {p} outside [0, 1)")));
            }
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) || !(self.bn_eps > 0.0) {
            return Err(Error::config("batch-norm momentum must be in (0, 1] and eps positive"));
        }
        Ok(())
    }

    pub fn pad(&self) -> usize {
        self.kernel / 2
    }

    /// Side length of each stream's feature map after both pools.
    pub fn final_side(&self) -> usize {
        self.input_side / 4
    }

    /// Width of the concatenated representation entering the head.
    pub fn fused_width(&self) -> usize {
        3 * self.c2 * self.final_side() * self.final_side()
    }

    /// Closed-form parameter count (running batch-norm statistics excluded).
    pub fn parameter_count(&self) -> ParamCount {
        let k2 = self.kernel * self.kernel;
        let block = |cin: usize, cout: usize| cout * cin * k2 + cout + 2 * cout;
        let attention = |c: usize| (3 * c * c + c) + (3 * c + 3);
        let hidden = self.c2 / self.se_reduction;
        ParamCount {
            streams: 3 * (block(1, self.c1) + block(self.c1, self.c2)),
            attention: if self.fusion_attention {
                attention(self.c1) + attention(self.c2)
            } else {
                0
            },
            se: if self.se {
                (self.c2 * hidden + hidden) + (hidden * self.c2 + self.c2)
            } else {
                0
            },
            head: (self.fused_width() * self.head_hidden + self.head_hidden)
                + 2 * self.head_hidden
                + (self.head_hidden * self.classes + self.classes),
        }
    }
}
