use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Labels, CLASS_NAMES, NUM_CLASSES};

/// Sequence-level confusion counts of one class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub classes: [ClassCounts; NUM_CLASSES],
}

impl ConfusionCounts {
    pub fn from_predictions(predicted: &[Labels], truth: &[Labels]) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::dim(format!(
                "{} predictions for {} labelled sequences",
                predicted.len(),
                truth.len()
            )));
        }
        let mut out = Self::default();
        for (p, t) in predicted.iter().zip(truth) {
            for (c, k) in out.classes.iter_mut().enumerate() {
                match (p[c] != 0, t[c] != 0) {
                    (true, true) => k.tp += 1,
                    (true, false) => k.fp += 1,
                    (false, true) => k.fn_ += 1,
                    (false, false) => k.tn += 1,
                }
            }
        }
        Ok(out)
    }
}

/// Per-class F1 with every 0/0 ratio taken as 0.
pub fn f1_per_class(counts: &ConfusionCounts) -> [f64; NUM_CLASSES] {
    counts.classes.map(|c| c.f1())
}

/// Unweighted mean of the per-class scores (UF1).
pub fn macro_f1(per_class: &[f64; NUM_CLASSES]) -> f64 {
    per_class.iter().sum::<f64>() / NUM_CLASSES as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub class_names: Vec<String>,
    pub counts: ConfusionCounts,
    pub f1: [f64; NUM_CLASSES],
    pub uf1: f64,
    pub theta: f64,
    pub sequences: usize,
}

impl MetricReport {
    pub fn new(predicted: &[Labels], truth: &[Labels], theta: f64) -> Result<Self> {
        let counts = ConfusionCounts::from_predictions(predicted, truth)?;
        let f1 = f1_per_class(&counts);
        Ok(Self {
            class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            counts,
            f1,
            uf1: macro_f1(&f1),
            theta,
            sequences: truth.len(),
        })
    }
}

/// UF1 of hard predictions against labels.
pub fn uf1_score(predicted: &[Labels], truth: &[Labels]) -> Result<f64> {
    Ok(macro_f1(&f1_per_class(&ConfusionCounts::from_predictions(predicted, truth)?)))
}
