use crate::error::{Error, Result};
use crate::model::ClassProbs;
use crate::pipeline::{NormStats, TrainingSample};
use crate::tensorgrad::{Real, Tensor};
use crate::types::{Labels, NUM_CLASSES};

/// Normalized samples ready for batching.
#[derive(Clone, Debug)]
pub struct SampleSet<T> {
    pub inputs: Vec<Tensor<T>>,
    pub labels: Vec<Labels>,
    pub sequence_ids: Vec<String>,
}

impl<T: Real> SampleSet<T> {
    /// Every feature must be `side × side`.
    pub fn from_samples(samples: &[TrainingSample], norm: &NormStats, side: usize) -> Result<Self> {
        let mut inputs = Vec::with_capacity(samples.len());
        for s in samples {
            if s.feature.width != side || s.feature.height != side {
                return Err(Error::dim(format!(
                    "{} {} feature is {}x{}, model expects {side}x{side}",
                    s.sequence_id, s.view, s.feature.width, s.feature.height
                )));
            }
            let f = norm.normalize(&s.feature);
            inputs.push(Tensor::new(
                vec![3, side, side],
                f.data.iter().map(|&v| T::lit(v as f64)).collect(),
            )?);
        }
        Ok(Self {
            inputs,
            labels: samples.iter().map(|s| s.labels).collect(),
            sequence_ids: samples.iter().map(|s| s.sequence_id.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Input `[B, 3, S, S]` and target `[B, classes]` tensors.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
        let xs: Vec<&Tensor<T>> = idx.iter().map(|&i| &self.inputs[i]).collect();
        let x = Tensor::stack(&xs)?;
        let mut y = Vec::with_capacity(idx.len() * NUM_CLASSES);
        for &i in idx {
            y.extend(self.labels[i].iter().map(|&b| T::lit(b as f64)));
        }
        Ok((x, Tensor::new(vec![idx.len(), NUM_CLASSES], y)?))
    }

    /// Groups per-sample probabilities by sequence in first-appearance
    /// order, returning ids, grouped probabilities and labels.
    pub fn group_by_sequence(&self, probs: &[ClassProbs]) -> (Vec<String>, Vec<Vec<ClassProbs>>, Vec<Labels>) {
        let mut ids: Vec<String> = Vec::new();
        let mut groups: Vec<Vec<ClassProbs>> = Vec::new();
        let mut labels = Vec::new();
        for (i, p) in probs.iter().enumerate() {
            let id = &self.sequence_ids[i];
            match ids.iter().position(|s| s == id) {
                Some(k) => groups[k].push(*p),
                None => {
                    ids.push(id.clone());
                    groups.push(vec![*p]);
                    labels.push(self.labels[i]);
                }
            }
        }
        (ids, groups, labels)
    }
}
