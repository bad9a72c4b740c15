use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{LossKind, TrainConfig};
use super::data::SampleSet;
use super::history::{early_stop_check, EpochRecord, StopDecision, TrainHistory};
use crate::error::{Error, Result};
use crate::evaluation::uf1_score;
use crate::model::{predict_multilabel, ClassProbs, ModelConfig, ModelState, DEFAULT_THRESHOLD};
use crate::pipeline::NormStats;
use crate::tensorgrad::{AdamState, Checkpoint, Graph, Mode, Real, Tensor, Var};

/// Random stream of one epoch (shuffle order and dropout masks). Stream 0
/// is left to weight initialization.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

fn locate(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Numeric { op } => Error::Numeric {
            op: format!("epoch {epoch} batch {batch}: {op}"),
        },
        other => other,
    }
}

fn loss_on<T: Real>(g: &mut Graph<T>, logits: Var, y: &Tensor<T>, cfg: &TrainConfig) -> Result<Var> {
    match cfg.loss {
        LossKind::Focal => g.focal_loss(logits, y, cfg.gamma_focal),
        LossKind::Bce => g.bce_with_logits(logits, y),
    }
}

/// Eval-mode loss (mean over samples) and per-sample probabilities, in
/// batches of `batch_size` with the remainder kept.
pub fn evaluate<T: Real>(state: &ModelState<T>, data: &SampleSet<T>, cfg: &TrainConfig) -> Result<(f64, Vec<ClassProbs>)> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    let mut probs = Vec::with_capacity(data.len());
    for chunk in idx.chunks(cfg.batch_size.max(1)) {
        let (x, y) = data.batch(chunk)?;
        let pred = state.predict(&x)?;
        let mut g = Graph::new();
        let z = g.input(pred.logits)?;
        let l = loss_on(&mut g, z, &y, cfg)?;
        total += g.value(l).data()[0].to_f64_lossless() * chunk.len() as f64;
        let p = pred.probabilities.data();
        let c = y.shape()[1];
        for r in 0..chunk.len() {
            probs.push(std::array::from_fn(|k| p[r * c + k].to_f64_lossless()));
        }
    }
    Ok((total / data.len() as f64, probs))
}

/// UF1 at the default threshold after fusing samples per sequence.
pub fn sequence_uf1<T: Real>(data: &SampleSet<T>, probs: &[ClassProbs], theta: f64) -> Result<f64> {
    let (_, groups, labels) = data.group_by_sequence(probs);
    uf1_score(&predict_multilabel(&groups, theta)?, &labels)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ResumeMeta {
    train_config: TrainConfig,
    history: TrainHistory,
    adam_steps: u64,
}

/// Model, optimizer and bookkeeping of one training run. Every epoch is a
/// pure function of the state and `(seed, epoch)`, so a restored trainer
/// continues exactly like an uninterrupted one.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub config: TrainConfig,
    pub state: ModelState<T>,
    pub adam: AdamState<T>,
    pub history: TrainHistory,
    best: ModelState<T>,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: &ModelConfig, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        crate::heap::retain_freed_buffers();
        let state = ModelState::build(model, config.seed)?;
        Ok(Self::from_state(state, config))
    }

    pub fn from_state(state: ModelState<T>, config: &TrainConfig) -> Self {
        crate::heap::retain_freed_buffers();
        Self {
            config: config.clone(),
            adam: AdamState::new(config.adam(), &state.params),
            best: state.clone(),
            state,
            history: TrainHistory::default(),
        }
    }

    pub fn epochs_done(&self) -> usize {
        self.history.epochs.len()
    }

    pub fn should_stop(&self) -> bool {
        self.epochs_done() >= self.config.epochs_max
            || early_stop_check(&self.history.val_losses(), self.config.patience, self.config.min_delta)
                == StopDecision::Stop
    }

    /// One pass over the shuffled training set followed by validation.
    pub fn run_epoch(&mut self, train: &SampleSet<T>, val: &SampleSet<T>) -> Result<&EpochRecord> {
        if val.is_empty() {
            return Err(Error::config("validation set is empty"));
        }
        let bs = self.config.batch_size;
        let batches = train.len() / bs;
        if batches == 0 {
            return Err(Error::config(format!(
                "{} training samples do not fill one batch of {bs}",
                train.len()
            )));
        }
        let epoch = self.epochs_done() + 1;
        let start = Instant::now();
        let mut rng = epoch_rng(self.config.seed, epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for b in 0..batches {
            let (x, y) = train.batch(&order[b * bs..(b + 1) * bs])?;
            let mut g = Graph::new();
            let (vars, out) = self
                .state
                .forward_on(&mut g, x, Mode::Train, &mut rng)
                .map_err(|e| locate(e, epoch, b + 1))?;
            let loss = loss_on(&mut g, out.logits, &y, &self.config).map_err(|e| locate(e, epoch, b + 1))?;
            let lv = g.value(loss).data()[0].to_f64_lossless();
            if !lv.is_finite() {
                return Err(locate(Error::numeric("loss"), epoch, b + 1));
            }
            let grads = g.backward(loss).map_err(|e| locate(e, epoch, b + 1))?;
            let zeros: Vec<Option<Tensor<T>>> = vars
                .iter()
                .zip(&self.state.params)
                .map(|(v, p)| grads.get(*v).is_none().then(|| Tensor::zeros(p.shape())))
                .collect();
            let gs: Vec<&Tensor<T>> = vars
                .iter()
                .zip(&zeros)
                .map(|(v, z)| grads.get(*v).or(z.as_ref()).expect("gradient or zero fill"))
                .collect();
            let mut ps: Vec<&mut Tensor<T>> = self.state.params.iter_mut().collect();
            self.adam.step(&mut ps, &gs)?;
            loss_sum += lv;
        }
        let (val_loss, probs) = evaluate(&self.state, val, &self.config)?;
        if !val_loss.is_finite() {
            return Err(Error::numeric(format!("validation loss after epoch {epoch}")));
        }
        let val_uf1 = sequence_uf1(val, &probs, DEFAULT_THRESHOLD)?;
        let improved = self
            .history
            .best()
            .is_none_or(|b| val_loss < b.val_loss);
        if improved {
            self.best = self.state.clone();
            self.history.best_epoch = Some(epoch);
        }
        self.history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_loss,
            val_uf1,
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(self.history.epochs.last().unwrap())
    }

    /// Runs epochs until early stopping or `epochs_max`, calling `on_epoch`
    /// after each.
    pub fn run(
        &mut self,
        train: &SampleSet<T>,
        val: &SampleSet<T>,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<()> {
        while !self.should_stop() {
            let rec = self.run_epoch(train, val)?;
            on_epoch(rec);
        }
        Ok(())
    }

    /// State of the best epoch (the initial state before any epoch ran).
    pub fn best_state(&self) -> &ModelState<T> {
        &self.best
    }

    pub fn finish(self) -> (ModelState<T>, TrainHistory) {
        (self.best, self.history)
    }

    /// Resumable snapshot: current and best weights, Adam moments and the
    /// history so far.
    pub fn to_checkpoint(&self, norm: Option<&NormStats>) -> Checkpoint {
        let extra = serde_json::to_value(ResumeMeta {
            train_config: self.config.clone(),
            history: self.history.clone(),
            adam_steps: self.adam.step_count,
        })
        .expect("resume metadata serializes");
        let mut ck = self.state.to_checkpoint(norm, extra);
        for (n, (m, v)) in self
            .state
            .names
            .iter()
            .zip(self.adam.first_moment.iter().zip(&self.adam.second_moment))
        {
            ck.push(format!("adam/m/{n}"), m);
            ck.push(format!("adam/v/{n}"), v);
        }
        for b in self.best.to_checkpoint(None, serde_json::Value::Null).blobs {
            ck.blobs.push(crate::tensorgrad::Blob {
                name: format!("best/{}", b.name),
                ..b
            });
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, Option<NormStats>)> {
        let (state, meta) = ModelState::<T>::from_checkpoint(ck)?;
        let resume: ResumeMeta = serde_json::from_value(meta.extra.clone())
            .map_err(|e| Error::Format(format!("checkpoint has no resumable training state: {e}")))?;
        resume.train_config.validate()?;
        let best_ck = Checkpoint {
            meta: ck.meta.clone(),
            blobs: ck
                .blobs
                .iter()
                .filter_map(|b| {
                    b.name.strip_prefix("best/").map(|n| crate::tensorgrad::Blob {
                        name: n.to_string(),
                        ..b.clone()
                    })
                })
                .collect(),
        };
        let (best, _) = ModelState::<T>::from_checkpoint(&best_ck)?;
        let mut adam = AdamState::new(resume.train_config.adam(), &state.params);
        adam.step_count = resume.adam_steps;
        for (i, n) in state.names.iter().enumerate() {
            adam.first_moment[i] = ck.tensor(&format!("adam/m/{n}"))?;
            adam.second_moment[i] = ck.tensor(&format!("adam/v/{n}"))?;
        }
        Ok((
            Self {
                config: resume.train_config,
                state,
                adam,
                history: resume.history,
                best,
            },
            meta.norm,
        ))
    }

    pub fn save(&self, path: &Path, norm: Option<&NormStats>) -> Result<()> {
        self.to_checkpoint(norm).save(path)
    }

    pub fn load(path: &Path) -> Result<(Self, Option<NormStats>)> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Trains from a seeded initialization and returns the best-epoch state.
pub fn train<T: Real>(
    train: &SampleSet<T>,
    val: &SampleSet<T>,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<(ModelState<T>, TrainHistory)> {
    let overlap = train.sequence_ids.iter().find(|id| val.sequence_ids.contains(id));
    if let Some(id) = overlap {
        return Err(Error::config(format!("sequence {id} is in both training and validation sets")));
    }
    let mut t = Trainer::new(model, config)?;
    t.run(train, val, |_| {})?;
    Ok(t.finish())
}
