use serde::{Deserialize, Serialize};

use super::metrics::uf1_score;
use crate::error::{Error, Result};
use crate::model::{predict_multilabel, ClassProbs};
use crate::types::Labels;

/// Thresholds 0.10, 0.11, ..., 0.30.
pub fn default_grid() -> Vec<f64> {
    (10..=30).map(|i| i as f64 / 100.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// `(theta, uf1)` in grid order.
    pub curve: Vec<(f64, f64)>,
    pub best_theta: f64,
    pub best_uf1: f64,
}

impl SweepResult {
    pub fn best_index(&self) -> usize {
        self.curve
            .iter()
            .position(|&(t, _)| t == self.best_theta)
            .unwrap_or(0)
    }
}

/// UF1 at each grid threshold; the argmax keeps the first (smallest) of
/// tied thresholds when the grid is ascending.
pub fn threshold_sweep(per_sequence: &[Vec<ClassProbs>], truth: &[Labels], grid: &[f64]) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::usage("threshold grid is empty"));
    }
    let mut curve = Vec::with_capacity(grid.len());
    let mut best = (grid[0], f64::NEG_INFINITY);
    for &theta in grid {
        let pred = predict_multilabel(per_sequence, theta)?;
        let uf1 = uf1_score(&pred, truth)?;
        if uf1 > best.1 || (uf1 == best.1 && theta < best.0) {
            best = (theta, uf1);
        }
        curve.push((theta, uf1));
    }
    Ok(SweepResult {
        curve,
        best_theta: best.0,
        best_uf1: best.1,
    })
}
