use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::state::{ModelState, STREAMS};
use crate::error::{Error, Result};
use crate::tensorgrad::{BatchNormStats, Graph, Mode, Real, Tensor, Var};

/// Stream weights `α = (α_u, α_v, α_m)` per sample for each attention stage,
/// and SE gates per sample.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttentionTrace {
    pub stages: Vec<Vec<[f64; 3]>>,
    pub se_gates: Vec<Vec<f64>>,
}

impl AttentionTrace {
    /// One line per sample and stage: `sample stage alpha_u alpha_v alpha_m`.
    pub fn to_text(&self) -> String {
        let mut s = String::from("sample\tstage\talpha_u\talpha_v\talpha_m\n");
        for (stage, rows) in self.stages.iter().enumerate() {
            for (b, a) in rows.iter().enumerate() {
                let _ = writeln!(s, "{b}\t{}\t{:.6}\t{:.6}\t{:.6}", stage + 1, a[0], a[1], a[2]);
            }
        }
        s
    }
}

/// Forward result inside a graph.
pub struct ForwardOutput {
    pub logits: Var,
    pub trace: AttentionTrace,
}

#[derive(Clone, Debug)]
pub struct Prediction<T> {
    /// `[B, C]` raw scores.
    pub logits: Tensor<T>,
    /// Sigmoid of the logits.
    pub probabilities: Tensor<T>,
    pub trace: AttentionTrace,
}

/// Parameter vars looked up by layout name.
struct Params<'a> {
    vars: &'a [Var],
    names: &'a [String],
}

impl Params<'_> {
    fn take(&self, name: &str) -> Result<Var> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::usage(format!("model has no parameter {name}")))
    }
}

/// Tags numeric failures with the layer they occurred in.
fn at<V>(layer: &str, r: Result<V>) -> Result<V> {
    r.map_err(|e| match e {
        Error::Numeric { op } => Error::Numeric {
            op: format!("{layer} ({op})"),
        },
        other => other,
    })
}

struct Ctx<'g, 'p, T, R: ?Sized> {
    g: &'g mut Graph<T>,
    p: Params<'p>,
    config: &'g ModelConfig,
    bn: &'g mut [BatchNormStats<T>],
    bn_names: &'g [String],
    mode: Mode,
    rng: &'g mut R,
}

impl<T: Real, R: Rng + ?Sized> Ctx<'_, '_, T, R> {
    fn bn_index(&self, name: &str) -> Result<usize> {
        self.bn_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::usage(format!("model has no batch-norm layer {name}")))
    }

    /// `Pool(Dropout(ReLU(BN(Conv(x)))))`.
    fn conv_block(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let w = self.p.take(&format!("{prefix}.conv.weight"))?;
        let b = self.p.take(&format!("{prefix}.conv.bias"))?;
        let gamma = self.p.take(&format!("{prefix}.bn.gamma"))?;
        let beta = self.p.take(&format!("{prefix}.bn.beta"))?;
        let pad = self.config.pad();
        let y = at(&format!("{prefix}.conv"), self.g.conv2d(x, w, b, 1, pad))?;
        let mode = self.mode;
        let i = self.bn_index(&format!("{prefix}.bn"))?;
        let y = at(&format!("{prefix}.bn"), self.g.batchnorm(y, gamma, beta, &mut self.bn[i], mode))?;
        let y = at(prefix, self.g.relu(y))?;
        let y = at(prefix, self.g.dropout(y, self.config.p_conv, self.mode, self.rng))?;
        at(&format!("{prefix}.pool"), self.g.maxpool2(y))
    }

    /// Scalar softmax weight per stream from pooled descriptors.
    fn fusion_attention(&mut self, f: [Var; 3], stage: usize, trace: &mut AttentionTrace) -> Result<[Var; 3]> {
        let name = format!("attention{stage}");
        let w1 = self.p.take(&format!("{name}.w1"))?;
        let b1 = self.p.take(&format!("{name}.b1"))?;
        let w2 = self.p.take(&format!("{name}.w2"))?;
        let b2 = self.p.take(&format!("{name}.b2"))?;
        let g = &mut *self.g;
        let (out, alpha) = at(&name, fusion_attention(g, f, [w1, b1, w2, b2]))?;
        let a = g.value(alpha).data();
        trace.stages.push(
            a.chunks_exact(3)
                .map(|r| [r[0].to_f64_lossless(), r[1].to_f64_lossless(), r[2].to_f64_lossless()])
                .collect(),
        );
        Ok(out)
    }

    /// Squeeze-and-excitation channel gating.
    fn se_block(&mut self, x: Var, trace: &mut AttentionTrace) -> Result<Var> {
        let w1 = self.p.take("se.w1")?;
        let b1 = self.p.take("se.b1")?;
        let w2 = self.p.take("se.w2")?;
        let b2 = self.p.take("se.b2")?;
        let g = &mut *self.g;
        let (out, gate) = at("se", se_block(g, x, [w1, b1, w2, b2]))?;
        let c = self.config.c2;
        trace.se_gates = g
            .value(gate)
            .data()
            .chunks_exact(c)
            .map(|r| r.iter().map(|v| v.to_f64_lossless()).collect())
            .collect();
        Ok(out)
    }
}

/// Fusion attention over three equal-shaped `[B, C, H, W]` maps with
/// weights `[w1, b1, w2, b2]`: `α = softmax(W2 relu(W1 [GAP(F_u), GAP(F_v),
/// GAP(F_m)] + b1) + b2)` and each stream scaled by its `α_k`. Returns the
/// scaled maps and `α: [B, 3]`.
pub fn fusion_attention<T: Real>(g: &mut Graph<T>, f: [Var; 3], w: [Var; 4]) -> Result<([Var; 3], Var)> {
    let shape = g.value(f[0]).shape().to_vec();
    if f.iter().any(|&v| g.value(v).shape() != shape.as_slice()) {
        return Err(Error::dim("fusion attention streams differ in shape"));
    }
    let pooled = [g.global_avg_pool(f[0])?, g.global_avg_pool(f[1])?, g.global_avg_pool(f[2])?];
    let desc = g.concat(&pooled)?;
    let h = g.linear(desc, w[0], w[1])?;
    let h = g.relu(h)?;
    let z = g.linear(h, w[2], w[3])?;
    let alpha = g.softmax(z)?;
    let out = [
        g.scale_by_column(f[0], alpha, 0)?,
        g.scale_by_column(f[1], alpha, 1)?,
        g.scale_by_column(f[2], alpha, 2)?,
    ];
    Ok((out, alpha))
}

/// Squeeze-and-excitation with weights `[w1, b1, w2, b2]`:
/// `e = sigmoid(W2 relu(W1 GAP(x) + b1) + b2)`, output `x ⊗ e`. Returns the
/// gated map and `e: [B, C]`.
pub fn se_block<T: Real>(g: &mut Graph<T>, x: Var, w: [Var; 4]) -> Result<(Var, Var)> {
    let s = g.global_avg_pool(x)?;
    let h = g.linear(s, w[0], w[1])?;
    let h = g.relu(h)?;
    let e = g.linear(h, w[2], w[3])?;
    let gate = g.sigmoid(e)?;
    Ok((g.channel_mul(x, gate)?, gate))
}

/// Records the network on `g`. `params` pairs with `names` and `bn` with
/// `bn_names`; train mode updates the running statistics in `bn`.
#[allow(clippy::too_many_arguments)]
pub fn forward_graph<T: Real, R: Rng + ?Sized>(
    config: &ModelConfig,
    g: &mut Graph<T>,
    params: &[Var],
    names: &[String],
    bn: &mut [BatchNormStats<T>],
    bn_names: &[String],
    input: Var,
    mode: Mode,
    rng: &mut R,
) -> Result<ForwardOutput> {
    let (_, ch, h, w) = g.value(input).dims4()?;
    let s = config.input_side;
    if ch != 3 || h != s || w != s {
        return Err(Error::dim(format!(
            "model expects [B, 3, {s}, {s}] input, got {:?}",
            g.value(input).shape()
        )));
    }
    let mut trace = AttentionTrace::default();
    let mut cx = Ctx {
        g,
        p: Params { vars: params, names },
        config,
        bn,
        bn_names,
        mode,
        rng,
    };
    let mut f = [input; 3];
    for (k, name) in STREAMS.iter().enumerate() {
        let x = cx.g.select_channel(input, k)?;
        f[k] = cx.conv_block(x, &format!("{name}.block1"))?;
    }
    if config.fusion_attention {
        f = cx.fusion_attention(f, 1, &mut trace)?;
    }
    for (k, name) in STREAMS.iter().enumerate() {
        f[k] = cx.conv_block(f[k], &format!("{name}.block2"))?;
    }
    if config.fusion_attention {
        f = cx.fusion_attention(f, 2, &mut trace)?;
    }
    if config.se {
        f[2] = cx.se_block(f[2], &mut trace)?;
    }
    let flat = [cx.g.flatten(f[0])?, cx.g.flatten(f[1])?, cx.g.flatten(f[2])?];
    let fused = cx.g.concat(&flat)?;

    let fc_w = cx.p.take("head.fc.weight")?;
    let fc_b = cx.p.take("head.fc.bias")?;
    let gamma = cx.p.take("head.bn.gamma")?;
    let beta = cx.p.take("head.bn.beta")?;
    let out_w = cx.p.take("head.out.weight")?;
    let out_b = cx.p.take("head.out.bias")?;
    let hdn = at("head.fc", cx.g.linear(fused, fc_w, fc_b))?;
    let i = cx.bn_index("head.bn")?;
    let hdn = at("head.bn", cx.g.batchnorm(hdn, gamma, beta, &mut cx.bn[i], mode))?;
    let hdn = at("head", cx.g.relu(hdn))?;
    let hdn = at("head", cx.g.dropout(hdn, config.p_head, mode, cx.rng))?;
    let logits = at("head.out", cx.g.linear(hdn, out_w, out_b))?;
    Ok(ForwardOutput { logits, trace })
}

impl<T: Real> ModelState<T> {
    /// Adds every parameter to `g` as a trainable leaf, in layout order.
    pub fn register(&self, g: &mut Graph<T>) -> Result<Vec<Var>> {
        self.params.iter().map(|p| g.param(p.clone())).collect()
    }

    /// Records a forward pass of `batch: [B, 3, S, S]` on `g`.
    pub fn forward_on<R: Rng + ?Sized>(
        &mut self,
        g: &mut Graph<T>,
        batch: Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Vec<Var>, ForwardOutput)> {
        let vars = self.register(g)?;
        let x = g.input(batch)?;
        let out = forward_graph(&self.config, g, &vars, &self.names, &mut self.bn, &self.bn_names, x, mode, rng)?;
        Ok((vars, out))
    }

    /// Forward pass; train mode updates batch-norm running statistics.
    pub fn forward<R: Rng + ?Sized>(&mut self, batch: &Tensor<T>, mode: Mode, rng: &mut R) -> Result<Prediction<T>> {
        let mut g = Graph::new();
        let (_, out) = self.forward_on(&mut g, batch.clone(), mode, rng)?;
        let logits = g.value(out.logits).clone();
        Ok(Prediction {
            probabilities: logits.map(crate::tensorgrad::kernels::sigmoid),
            logits,
            trace: out.trace,
        })
    }

    /// Deterministic eval-mode forward pass that leaves the state untouched.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Prediction<T>> {
        let mut bn = self.bn.clone();
        let mut g = Graph::new();
        let vars = self.register(&mut g)?;
        let x = g.input(batch.clone())?;
        // eval mode draws nothing from the stream
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = forward_graph(&self.config, &mut g, &vars, &self.names, &mut bn, &self.bn_names, x, Mode::Eval, &mut rng)?;
        let logits = g.value(out.logits).clone();
        Ok(Prediction {
            probabilities: logits.map(crate::tensorgrad::kernels::sigmoid),
            logits,
            trace: out.trace,
        })
    }
}
