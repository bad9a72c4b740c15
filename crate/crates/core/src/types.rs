//! Small domain enums shared by several modules.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub const NUM_CLASSES: usize = 5;

/// Emotion categories in the fixed label-bit order.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["Negative", "Positive", "Repression", "Surprise", "Others"];

/// Multi-label target: one bit per emotion class.
pub type Labels = [u8; NUM_CLASSES];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Left,
    Right,
    /// Composite frame holding both views side by side; split during
    /// preprocessing.
    Dual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    OnsetApex,
    ApexOffset,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl View {
    pub fn tag(self) -> u8 {
        match self {
            View::Left => 0,
            View::Right => 1,
            View::Dual => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(View::Left),
            1 => Some(View::Right),
            2 => Some(View::Dual),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            View::Left => "left",
            View::Right => "right",
            View::Dual => "dual",
        }
    }
}

impl Phase {
    pub fn tag(self) -> u8 {
        match self {
            Phase::OnsetApex => 0,
            Phase::ApexOffset => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Phase::OnsetApex),
            1 => Some(Phase::ApexOffset),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::OnsetApex => "onset_apex",
            Phase::ApexOffset => "apex_offset",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split {other:?}"))),
        }
    }
}

/// Training runs in train mode; evaluation and validation in eval mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    Train,
    Eval,
}
