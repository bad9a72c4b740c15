use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_uf1: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch with the lowest validation loss (first on ties).
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    pub fn val_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_loss).collect()
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.best_epoch.map(|e| &self.epochs[e - 1])
    }

    /// Equality of everything except wall-clock time.
    pub fn same_trajectory(&self, other: &Self) -> bool {
        self.best_epoch == other.best_epoch
            && self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.train_loss.to_bits() == b.train_loss.to_bits()
                    && a.val_loss.to_bits() == b.val_loss.to_bits()
                    && a.val_uf1.to_bits() == b.val_uf1.to_bits()
            })
    }

    /// Columns `epoch,train_loss,val_loss,val_uf1,seconds`. Losses are
    /// written with round-trip precision.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,val_uf1,seconds\n");
        for e in &self.epochs {
            writeln!(
                s,
                "{},{:?},{:?},{:?},{:.3}",
                e.epoch, e.train_loss, e.val_loss, e.val_uf1, e.seconds
            )
            .unwrap();
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Stops once `patience` epochs have passed since the last epoch whose val
/// loss improved on the running best by strictly more than `min_delta`.
pub fn early_stop_check(val_losses: &[f64], patience: usize, min_delta: f64) -> StopDecision {
    let Some(&first) = val_losses.first() else {
        return StopDecision::Continue;
    };
    let (mut best, mut best_at) = (first, 0usize);
    for (i, &v) in val_losses.iter().enumerate().skip(1) {
        if best - v > min_delta {
            best = v;
            best_at = i;
        }
    }
    if val_losses.len() - 1 - best_at >= patience {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    }
}
