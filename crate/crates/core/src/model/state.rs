use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::digest::Hasher;
use crate::error::{Error, Result};
use crate::pipeline::NormStats;
use crate::tensorgrad::{BatchNormStats, Checkpoint, DType, Real, Tensor};

/// Version of the model layout stored in checkpoint metadata.
pub const MODEL_FORMAT: u32 = 1;

pub const STREAMS: [&str; 3] = ["u", "v", "m"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Init {
    /// He uniform with the given fan-in.
    He(usize),
    Zero,
    One,
}

/// Ordered parameter table: name, shape and initializer.
pub(crate) fn layout(c: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let k = c.kernel;
    let mut out = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init| out.push((name, shape, init));
    for s in STREAMS {
        for (b, cin, cout) in [(1, 1, c.c1), (2, c.c1, c.c2)] {
            push(format!("{s}.block{b}.conv.weight"), vec![cout, cin, k, k], Init::He(cin * k * k));
            push(format!("{s}.block{b}.conv.bias"), vec![cout], Init::Zero);
            push(format!("{s}.block{b}.bn.gamma"), vec![cout], Init::One);
            push(format!("{s}.block{b}.bn.beta"), vec![cout], Init::Zero);
        }
    }
    if c.fusion_attention {
        for (stage, ch) in [(1, c.c1), (2, c.c2)] {
            push(format!("attention{stage}.w1"), vec![ch, 3 * ch], Init::He(3 * ch));
            push(format!("attention{stage}.b1"), vec![ch], Init::Zero);
            push(format!("attention{stage}.w2"), vec![3, ch], Init::He(ch));
            push(format!("attention{stage}.b2"), vec![3], Init::Zero);
        }
    }
    if c.se {
        let h = c.c2 / c.se_reduction;
        push("se.w1".into(), vec![h, c.c2], Init::He(c.c2));
        push("se.b1".into(), vec![h], Init::Zero);
        push("se.w2".into(), vec![c.c2, h], Init::He(h));
        push("se.b2".into(), vec![c.c2], Init::Zero);
    }
    let f = c.fused_width();
    push("head.fc.weight".into(), vec![c.head_hidden, f], Init::He(f));
    push("head.fc.bias".into(), vec![c.head_hidden], Init::Zero);
    push("head.bn.gamma".into(), vec![c.head_hidden], Init::One);
    push("head.bn.beta".into(), vec![c.head_hidden], Init::Zero);
    push("head.out.weight".into(), vec![c.classes, c.head_hidden], Init::He(c.head_hidden));
    push("head.out.bias".into(), vec![c.classes], Init::Zero);
    out
}

/// Batch-norm layer names in forward order with their channel counts.
pub(crate) fn bn_layout(c: &ModelConfig) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    for s in STREAMS {
        out.push((format!("{s}.block1.bn"), c.c1));
        out.push((format!("{s}.block2.bn"), c.c2));
    }
    out.push(("head.bn".into(), c.head_hidden));
    out
}

/// Learnable parameters and batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<T> {
    pub config: ModelConfig,
    pub names: Vec<String>,
    pub params: Vec<Tensor<T>>,
    pub bn_names: Vec<String>,
    pub bn: Vec<BatchNormStats<T>>,
}

/// JSON metadata stored alongside the tensors of a model checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub model_format: u32,
    pub dtype: DType,
    pub config: ModelConfig,
    #[serde(default)]
    pub norm: Option<NormStats>,
    /// Free-form payload for callers such as the trainer.
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl<T: Real> ModelState<T> {
    /// He-uniform weights (bound `√(6 / fan_in)`), zero biases, unit BN scale.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape, init) in layout(config) {
            let t = match init {
                Init::He(fan_in) => {
                    let bound = (6.0 / fan_in as f64).sqrt();
                    Tensor::from_fn(&shape, |_| T::lit(rng.random_range(-bound..bound)))
                }
                Init::Zero => Tensor::zeros(&shape),
                Init::One => Tensor::full(&shape, T::one()),
            };
            names.push(name);
            params.push(t);
        }
        let (bn_names, bn) = bn_layout(config)
            .into_iter()
            .map(|(n, ch)| {
                let mut s = BatchNormStats::new(ch);
                s.momentum = T::lit(config.bn_momentum);
                s.eps = T::lit(config.bn_eps);
                (n, s)
            })
            .unzip();
        Ok(Self {
            config: config.clone(),
            names,
            params,
            bn_names,
            bn,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.params[i])
    }

    /// SHA-256 over parameter names and little-endian values.
    pub fn param_hash(&self) -> String {
        let mut h = Hasher::new();
        let mut buf = Vec::new();
        for (n, p) in self.names.iter().zip(&self.params) {
            buf.clear();
            for &v in p.data() {
                v.write_le(&mut buf);
            }
            h.field(n.as_bytes()).field(&buf);
        }
        h.finish()
    }

    /// Same architecture in another precision.
    pub fn cast<U: Real>(&self) -> ModelState<U> {
        ModelState {
            config: self.config.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(|p| p.cast()).collect(),
            bn_names: self.bn_names.clone(),
            bn: self
                .bn
                .iter()
                .map(|s| BatchNormStats {
                    running_mean: s.running_mean.cast(),
                    running_var: s.running_var.cast(),
                    momentum: U::lit(s.momentum.to_f64_lossless()),
                    eps: U::lit(s.eps.to_f64_lossless()),
                })
                .collect(),
        }
    }

    pub fn to_checkpoint(&self, norm: Option<&NormStats>, extra: serde_json::Value) -> Checkpoint {
        let meta = ModelMeta {
            model_format: MODEL_FORMAT,
            dtype: T::DTYPE,
            config: self.config.clone(),
            norm: norm.cloned(),
            extra,
        };
        let mut ck = Checkpoint {
            meta: serde_json::to_string(&meta).expect("model meta serializes"),
            blobs: Vec::new(),
        };
        for (n, p) in self.names.iter().zip(&self.params) {
            ck.push(format!("param/{n}"), p);
        }
        for (n, s) in self.bn_names.iter().zip(&self.bn) {
            ck.push(format!("bn/{n}/running_mean"), &s.running_mean);
            ck.push(format!("bn/{n}/running_var"), &s.running_var);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, ModelMeta)> {
        let meta: ModelMeta = serde_json::from_str(&ck.meta)
            .map_err(|e| Error::Format(format!("model metadata: {e}")))?;
        if meta.model_format != MODEL_FORMAT {
            return Err(Error::Version {
                found: meta.model_format,
                expected: MODEL_FORMAT,
            });
        }
        let mut state = Self::build(&meta.config, 0)?;
        for (n, p) in state.names.iter().zip(state.params.iter_mut()) {
            let t: Tensor<T> = ck.tensor(&format!("param/{n}"))?;
            if t.shape() != p.shape() {
                return Err(Error::Format(format!(
                    "parameter {n} has shape {:?}, config implies {:?}",
                    t.shape(),
                    p.shape()
                )));
            }
            *p = t;
        }
        for (n, s) in state.bn_names.iter().zip(state.bn.iter_mut()) {
            s.running_mean = ck.tensor(&format!("bn/{n}/running_mean"))?;
            s.running_var = ck.tensor(&format!("bn/{n}/running_var"))?;
        }
        Ok((state, meta))
    }
}
