use crate::error::{Error, Result};
use crate::types::{Labels, NUM_CLASSES};

pub const DEFAULT_THRESHOLD: f64 = 0.20;

/// Class probabilities of one evaluated sample.
pub type ClassProbs = [f64; NUM_CLASSES];

/// Arithmetic mean over the samples of one sequence.
pub fn fuse_probabilities(samples: &[ClassProbs]) -> Result<ClassProbs> {
    if samples.is_empty() {
        return Err(Error::usage("cannot fuse an empty sample list"));
    }
    let mut out = [0.0; NUM_CLASSES];
    for s in samples {
        for (o, p) in out.iter_mut().zip(s) {
            *o += p;
        }
    }
    Ok(out.map(|v| v / samples.len() as f64))
}

/// Bit `i` is set iff `probs[i] >= theta`; with no bit set, the first
/// most probable class is set instead.
pub fn threshold_labels(probs: &ClassProbs, theta: f64) -> Labels {
    let mut bits = probs.map(|p| u8::from(p >= theta));
    if bits.iter().all(|&b| b == 0) {
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        bits[best] = 1;
    }
    bits
}

/// Fuses each sequence's sample probabilities and thresholds them.
pub fn predict_multilabel(per_sequence: &[Vec<ClassProbs>], theta: f64) -> Result<Vec<Labels>> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::usage(format!("threshold {theta} outside (0, 1)")));
    }
    per_sequence
        .iter()
        .map(|s| Ok(threshold_labels(&fuse_probabilities(s)?, theta)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_rules() {
        assert_eq!(DEFAULT_THRESHOLD, 0.20);
        assert_eq!(threshold_labels(&[0.9, 0.1, 0.1, 0.1, 0.1], 0.2), [1, 0, 0, 0, 0]);
        assert_eq!(threshold_labels(&[0.05, 0.1, 0.15, 0.12, 0.1], 0.2), [0, 0, 1, 0, 0]);
        assert_eq!(threshold_labels(&[0.1, 0.1, 0.1, 0.1, 0.1], 0.2), [1, 0, 0, 0, 0]);
        assert_eq!(threshold_labels(&[0.2, 0.5, 0.0, 0.3, 0.19], 0.2), [1, 1, 0, 1, 0]);
    }

    #[test]
    fn fusion_is_mean() {
        let f = fuse_probabilities(&[[0.2, 0.4, 0.0, 1.0, 0.5], [0.4, 0.0, 0.2, 0.0, 0.5]]).unwrap();
        let want = [0.3, 0.2, 0.1, 0.5, 0.5];
        assert!(f.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-12));
        let p = predict_multilabel(&[vec![[0.3, 0.1, 0.1, 0.1, 0.1], [0.05, 0.1, 0.1, 0.1, 0.1]]], 0.2).unwrap();
        // fused class-0 mean 0.175 is below θ, so the fallback picks it
        assert_eq!(p, vec![[1, 0, 0, 0, 0]]);
        assert!(matches!(predict_multilabel(&[vec![]], 0.2), Err(Error::Usage(_))));
        assert!(matches!(predict_multilabel(&[], 1.0), Err(Error::Usage(_))));
    }
}
