//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node to the [`Graph`]; [`Graph::backward`]
//! walks the tape in reverse and consumes it. A node requires a gradient when
//! any of its inputs does, so constant inputs cost nothing in the backward
//! pass.

use rand::{Rng, RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::kernels::{self, ConvGeom};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Train mode uses batch statistics and active dropout; eval mode is
/// deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running statistics and hyperparameters of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats<T> {
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Real> BatchNormStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: T::lit(0.1),
            eps: T::lit(1e-5),
        }
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    GlobalAvgPool(Var),
    SelectChannel {
        x: Var,
        channel: usize,
    },
    ScaleByColumn {
        x: Var,
        weights: Var,
        column: usize,
    },
    ChannelMul {
        x: Var,
        gate: Var,
    },
    Concat(Vec<Var>),
    Reshape(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    FocalLoss {
        logits: Var,
        targets: Vec<T>,
        gamma: T,
    },
    Bce {
        logits: Var,
        targets: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Recorded forward computation.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Probability clamp applied inside the focal loss.
pub const PROB_CLAMP: f64 = 1e-7;

/// Which channels of a 4-D or 2-D tensor a batch-norm layer normalizes over.
fn channel_layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [b, c, h, w] => Ok((b, c, h * w)),
        [b, c] => Ok((b, c, 1)),
        _ => Err(Error::dim(format!(
            "batchnorm expects a 2-D or 4-D tensor, got {shape:?}"
        ))),
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &str, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::numeric(name));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::numeric("leaf"));
        }
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Trainable leaf; receives a gradient in [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Constant leaf.
    pub fn input(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (out, geom) =
            kernels::conv2d_forward(self.value(x), self.value(w), self.value(b), stride, pad)?;
        self.push("conv2d", out, Op::Conv2d { x, w, b, geom }, &[x, w, b])
    }

    /// Per-channel normalization over `(B, H, W)` (or `B` for 2-D input).
    /// Train mode updates `stats` with the batch moments.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BatchNormStats<T>,
        mode: Mode,
    ) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let (batch, channels, plane) = channel_layout(&shape)?;
        if self.value(gamma).shape() != [channels]
            || self.value(beta).shape() != [channels]
            || stats.running_mean.shape() != [channels]
        {
            return Err(Error::dim(format!(
                "batchnorm parameters do not match {channels} channels"
            )));
        }
        let train = mode == Mode::Train;
        if train && batch < 2 {
            return Err(Error::config(
                "batchnorm in train mode needs a batch of at least 2",
            ));
        }
        let count = batch * plane;
        let xs = self.value(x).data();
        let mut mean = vec![T::zero(); channels];
        let mut var = vec![T::zero(); channels];
        let planes = |c: usize| (0..batch).map(move |b| (b * channels + c) * plane);
        if train {
            for c in 0..channels {
                let mut s = T::zero();
                for base in planes(c) {
                    s += xs[base..base + plane].iter().copied().sum::<T>();
                }
                mean[c] = s / T::lit(count as f64);
                let mut q = T::zero();
                for base in planes(c) {
                    q += xs[base..base + plane]
                        .iter()
                        .map(|&v| (v - mean[c]) * (v - mean[c]))
                        .sum::<T>();
                }
                var[c] = q / T::lit(count as f64);
            }
        } else {
            mean.copy_from_slice(stats.running_mean.data());
            var.copy_from_slice(stats.running_var.data());
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + stats.eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let be = self.value(beta).data();
        let mut xhat = vec![T::zero(); xs.len()];
        let mut out = vec![T::zero(); xs.len()];
        for (k, ((src, h), o)) in xs
            .chunks_exact(plane)
            .zip(xhat.chunks_exact_mut(plane))
            .zip(out.chunks_exact_mut(plane))
            .enumerate()
        {
            let c = k % channels;
            let (m, is, gc, bc) = (mean[c], inv_std[c], g[c], be[c]);
            for ((&v, hv), ov) in src.iter().zip(h.iter_mut()).zip(o.iter_mut()) {
                *hv = (v - m) * is;
                *ov = gc * *hv + bc;
            }
        }
        if train {
            let m = stats.momentum;
            let unbias = T::lit(count as f64 / (count as f64 - 1.0));
            for c in 0..channels {
                let rm = &mut stats.running_mean.data_mut()[c];
                *rm = (T::one() - m) * *rm + m * mean[c];
                let rv = &mut stats.running_var.data_mut()[c];
                *rv = (T::one() - m) * *rv + m * var[c] * unbias;
            }
        }
        let value = Tensor::new(shape, out)?;
        self.push(
            "batchnorm",
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            &[x, gamma, beta],
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push("relu", out, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(kernels::sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(x), &[x])
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = kernels::softmax_lastaxis(self.value(x));
        self.push("softmax", out, Op::Softmax(x), &[x])
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = kernels::maxpool2_forward(self.value(x))?;
        self.push("maxpool2", out, Op::MaxPool2 { x, argmax }, &[x])
    }

    /// Inverted dropout: survivors are scaled by `1 / (1 - p)`. Identity in
    /// eval mode or for `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config(format!(
                "dropout probability must lie in [0, 1), got {p}"
            )));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - p));
        // one seed from the caller's stream drives a fast generator; an
        // element is dropped when its 16-bit draw falls below p · 2^16
        let mut fast = Xoshiro256PlusPlus::seed_from_u64(rng.next_u64());
        let cut = (p * 65536.0).round() as u64;
        let src = self.value(x);
        let n = src.numel();
        let mut mask: Vec<T> = Vec::with_capacity(n);
        for _ in 0..n.div_ceil(4) {
            let r = fast.next_u64();
            for k in 0..4 {
                let drop = (r >> (16 * k)) & 0xffff < cut;
                mask.push(T::lit(f64::from(u8::from(!drop))) * keep);
            }
        }
        mask.truncate(n);
        let out: Vec<T> = src.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::new(src.shape().to_vec(), out)?;
        self.push("dropout", out, Op::Dropout { x, mask }, &[x])
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = kernels::linear_forward(self.value(x), self.value(w), self.value(b))?;
        self.push("linear", out, Op::Linear { x, w, b }, &[x, w, b])
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let out = kernels::global_avg_pool(self.value(x))?;
        self.push("global_avg_pool", out, Op::GlobalAvgPool(x), &[x])
    }

    /// `[B, C, H, W] -> [B, 1, H, W]` holding channel `channel`.
    pub fn select_channel(&mut self, x: Var, channel: usize) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4()?;
        if channel >= c {
            return Err(Error::dim(format!("channel {channel} out of range for {c}")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(b * h * w);
        for bi in 0..b {
            let base = (bi * c + channel) * h * w;
            out.extend_from_slice(&src[base..base + h * w]);
        }
        let out = Tensor::new(vec![b, 1, h, w], out)?;
        self.push("select_channel", out, Op::SelectChannel { x, channel }, &[x])
    }

    /// Scales every element of sample `b` of `x` by `weights[b, column]`.
    pub fn scale_by_column(&mut self, x: Var, weights: Var, column: usize) -> Result<Var> {
        let xs = self.value(x);
        let (wb, wc) = self.value(weights).dims2()?;
        let batch = xs.shape()[0];
        if wb != batch || column >= wc {
            return Err(Error::dim(format!(
                "scale weights {:?} incompatible with input {:?}",
                self.value(weights).shape(),
                xs.shape()
            )));
        }
        let per = xs.numel() / batch.max(1);
        let ws = self.value(weights).data();
        let data = xs
            .data()
            .chunks_exact(per.max(1))
            .enumerate()
            .flat_map(|(b, chunk)| {
                let s = ws[b * wc + column];
                chunk.iter().map(move |&v| v * s)
            })
            .collect();
        let out = Tensor::new(xs.shape().to_vec(), data)?;
        self.push(
            "scale_by_column",
            out,
            Op::ScaleByColumn { x, weights, column },
            &[x, weights],
        )
    }

    /// `x: [B, C, H, W]` times `gate: [B, C]` broadcast over the plane.
    pub fn channel_mul(&mut self, x: Var, gate: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4()?;
        if self.value(gate).shape() != [b, c] {
            return Err(Error::dim(format!(
                "channel gate {:?} does not match input {:?}",
                self.value(gate).shape(),
                self.value(x).shape()
            )));
        }
        let gs = self.value(gate).data();
        let data = self
            .value(x)
            .data()
            .chunks_exact(h * w)
            .zip(gs)
            .flat_map(|(plane, &s)| plane.iter().map(move |&v| v * s))
            .collect();
        let out = Tensor::new(vec![b, c, h, w], data)?;
        self.push("channel_mul", out, Op::ChannelMul { x, gate }, &[x, gate])
    }

    /// Concatenates 2-D tensors `[B, N_i]` along the feature axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::usage("concat of an empty list"))?;
        let batch = self.value(*first).shape()[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (b, n) = self.value(p).dims2()?;
            if b != batch {
                return Err(Error::dim("concat batch sizes differ"));
            }
            widths.push(n);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(batch * total);
        for b in 0..batch {
            for (&p, &n) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[b * n..(b + 1) * n]);
            }
        }
        let out = Tensor::new(vec![batch, total], out)?;
        self.push("concat", out, Op::Concat(parts.to_vec()), parts)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        self.push("reshape", out, Op::Reshape(x), &[x])
    }

    /// `[B, ...] -> [B, N]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape();
        let b = shape[0];
        let rest = shape[1..].iter().product();
        self.reshape(x, &[b, rest])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dim("add operands differ in shape"));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dim("mul operands differ in shape"));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push("sum", out, Op::Sum(x), &[x])
    }

    /// Sigmoid-form binary focal loss averaged over batch and classes:
    /// `y (1-p)^γ (-ln p) + (1-y) p^γ (-ln(1-p))` with `p = sigmoid(logit)`
    /// clamped to `[1e-7, 1 - 1e-7]`.
    pub fn focal_loss(&mut self, logits: Var, targets: &Tensor<T>, gamma: f64) -> Result<Var> {
        let lg = self.value(logits);
        lg.dims2()?;
        if targets.shape() != lg.shape() {
            return Err(Error::dim(format!(
                "targets {:?} do not match logits {:?}",
                targets.shape(),
                lg.shape()
            )));
        }
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(Error::config(format!("focal gamma must be finite and >= 0, got {gamma}")));
        }
        if targets
            .data()
            .iter()
            .any(|&y| y != T::zero() && y != T::one())
        {
            return Err(Error::data("focal loss targets must be 0 or 1"));
        }
        let g = T::lit(gamma);
        let total: T = lg
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&z, &y)| focal_term(z, y, g))
            .sum();
        let out = Tensor::scalar(total / T::lit(lg.numel() as f64));
        self.push(
            "focal_loss",
            out,
            Op::FocalLoss {
                logits,
                targets: targets.data().to_vec(),
                gamma: g,
            },
            &[logits],
        )
    }

    /// Binary cross-entropy on logits averaged over batch and classes, in the
    /// overflow-free form `max(z, 0) - z y + ln(1 + e^{-|z|})`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor<T>) -> Result<Var> {
        let lg = self.value(logits);
        lg.dims2()?;
        if targets.shape() != lg.shape() {
            return Err(Error::dim(format!(
                "targets {:?} do not match logits {:?}",
                targets.shape(),
                lg.shape()
            )));
        }
        let total: T = lg
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&z, &y)| z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let out = Tensor::scalar(total / T::lit(lg.numel() as f64));
        self.push(
            "bce_with_logits",
            out,
            Op::Bce {
                logits,
                targets: targets.data().to_vec(),
            },
            &[logits],
        )
    }

    /// Reverse pass from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.requires_grad {
            return Err(Error::usage(
                "backward on a value that does not depend on any parameter",
            ));
        }
        let mut nodes = self.nodes;
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            if !nodes[idx].requires_grad {
                continue;
            }
            let op = std::mem::replace(&mut nodes[idx].op, Op::Leaf);
            if let Op::Leaf = op {
                grads[idx] = Some(dy);
                continue;
            }
            let needs = |v: Var| nodes[v.0].requires_grad;
            let mut contributions: Vec<(Var, Vec<T>)> = Vec::new();
            match op {
                Op::Leaf => unreachable!(),
                Op::Conv2d { x, w, b, geom } => {
                    let (dx, dw, db) = kernels::conv2d_backward(
                        &nodes[x.0].value,
                        &nodes[w.0].value,
                        &geom,
                        &dy,
                        needs(x),
                    );
                    if let Some(dx) = dx {
                        contributions.push((x, dx));
                    }
                    contributions.push((w, dw));
                    contributions.push((b, db));
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    train,
                } => {
                    let (batch, channels, plane) = channel_layout(nodes[x.0].value.shape())?;
                    let gv = nodes[gamma.0].value.data();
                    let mut dgamma = vec![T::zero(); channels];
                    let mut dbeta = vec![T::zero(); channels];
                    for (k, (d, h)) in dy.chunks_exact(plane).zip(xhat.chunks_exact(plane)).enumerate() {
                        let c = k % channels;
                        dgamma[c] += d.iter().zip(h).map(|(&a, &b)| a * b).sum::<T>();
                        dbeta[c] += d.iter().copied().sum::<T>();
                    }
                    if needs(x) {
                        let mut dx = vec![T::zero(); dy.len()];
                        let n = T::lit((batch * plane) as f64);
                        for (k, ((d, h), o)) in dy
                            .chunks_exact(plane)
                            .zip(xhat.chunks_exact(plane))
                            .zip(dx.chunks_exact_mut(plane))
                            .enumerate()
                        {
                            let c = k % channels;
                            // Σ dxhat = γ Σ dy and Σ dxhat·xhat = γ Σ dy·xhat
                            let sum_d = gv[c] * dbeta[c];
                            let sum_dx = gv[c] * dgamma[c];
                            let (gc, is) = (gv[c], inv_std[c]);
                            for ((&dv, &hv), ov) in d.iter().zip(h).zip(o.iter_mut()) {
                                let dxh = dv * gc;
                                *ov = if train {
                                    is / n * (n * dxh - sum_d - hv * sum_dx)
                                } else {
                                    dxh * is
                                };
                            }
                        }
                        contributions.push((x, dx));
                    }
                    contributions.push((gamma, dgamma));
                    contributions.push((beta, dbeta));
                }
                Op::Relu(x) => {
                    let xs = nodes[x.0].value.data();
                    let dx = dy
                        .iter()
                        .zip(xs)
                        .map(|(&d, &v)| if v > T::zero() { d } else { T::zero() })
                        .collect();
                    contributions.push((x, dx));
                }
                Op::Sigmoid(x) => {
                    let ys = nodes[idx].value.data();
                    let dx = dy
                        .iter()
                        .zip(ys)
                        .map(|(&d, &y)| d * y * (T::one() - y))
                        .collect();
                    contributions.push((x, dx));
                }
                Op::Softmax(x) => {
                    let ys = nodes[idx].value.data();
                    let last = *nodes[idx].value.shape().last().unwrap_or(&1);
                    let mut dx = vec![T::zero(); dy.len()];
                    for ((drow, yrow), out) in dy
                        .chunks_exact(last)
                        .zip(ys.chunks_exact(last))
                        .zip(dx.chunks_exact_mut(last))
                    {
                        let dot: T = drow.iter().zip(yrow).map(|(&d, &y)| d * y).sum();
                        for ((o, &d), &y) in out.iter_mut().zip(drow).zip(yrow) {
                            *o = y * (d - dot);
                        }
                    }
                    contributions.push((x, dx));
                }
                Op::MaxPool2 { x, argmax } => {
                    let mut dx = vec![T::zero(); nodes[x.0].value.numel()];
                    for (&src, &d) in argmax.iter().zip(&dy) {
                        dx[src] += d;
                    }
                    contributions.push((x, dx));
                }
                Op::Dropout { x, mask } => {
                    let dx = dy.iter().zip(&mask).map(|(&d, &m)| d * m).collect();
                    contributions.push((x, dx));
                }
                Op::Linear { x, w, b } => {
                    let (dx, dw, db) = kernels::linear_backward(
                        &nodes[x.0].value,
                        &nodes[w.0].value,
                        &dy,
                        needs(x),
                    );
                    if let Some(dx) = dx {
                        contributions.push((x, dx));
                    }
                    contributions.push((w, dw));
                    contributions.push((b, db));
                }
                Op::GlobalAvgPool(x) => {
                    let (_, _, h, w) = nodes[x.0].value.dims4()?;
                    let inv = T::one() / T::lit((h * w) as f64);
                    let dx = dy
                        .iter()
                        .flat_map(|&d| std::iter::repeat_n(d * inv, h * w))
                        .collect();
                    contributions.push((x, dx));
                }
                Op::SelectChannel { x, channel } => {
                    let (b, c, h, w) = nodes[x.0].value.dims4()?;
                    let mut dx = vec![T::zero(); b * c * h * w];
                    for bi in 0..b {
                        let base = (bi * c + channel) * h * w;
                        dx[base..base + h * w].copy_from_slice(&dy[bi * h * w..(bi + 1) * h * w]);
                    }
                    contributions.push((x, dx));
                }
                Op::ScaleByColumn { x, weights, column } => {
                    let xs = nodes[x.0].value.data();
                    let ws = nodes[weights.0].value.data();
                    let (wb, wc) = (nodes[weights.0].value.shape()[0], nodes[weights.0].value.shape()[1]);
                    let per = xs.len() / wb.max(1);
                    if needs(x) {
                        let dx = dy
                            .chunks_exact(per)
                            .enumerate()
                            .flat_map(|(b, chunk)| {
                                let s = ws[b * wc + column];
                                chunk.iter().map(move |&d| d * s)
                            })
                            .collect();
                        contributions.push((x, dx));
                    }
                    let mut dw = vec![T::zero(); wb * wc];
                    for b in 0..wb {
                        dw[b * wc + column] = dy[b * per..(b + 1) * per]
                            .iter()
                            .zip(&xs[b * per..(b + 1) * per])
                            .map(|(&d, &v)| d * v)
                            .sum();
                    }
                    contributions.push((weights, dw));
                }
                Op::ChannelMul { x, gate } => {
                    let (b, c, h, w) = nodes[x.0].value.dims4()?;
                    let xs = nodes[x.0].value.data();
                    let gs = nodes[gate.0].value.data();
                    let plane = h * w;
                    if needs(x) {
                        let dx = dy
                            .chunks_exact(plane)
                            .zip(gs)
                            .flat_map(|(p, &s)| p.iter().map(move |&d| d * s))
                            .collect();
                        contributions.push((x, dx));
                    }
                    let dg = (0..b * c)
                        .map(|i| {
                            dy[i * plane..(i + 1) * plane]
                                .iter()
                                .zip(&xs[i * plane..(i + 1) * plane])
                                .map(|(&d, &v)| d * v)
                                .sum()
                        })
                        .collect();
                    contributions.push((gate, dg));
                }
                Op::Concat(parts) => {
                    let batch = nodes[idx].value.shape()[0];
                    let total = nodes[idx].value.shape()[1];
                    let mut offset = 0;
                    for p in parts {
                        let n = nodes[p.0].value.shape()[1];
                        let mut dp = Vec::with_capacity(batch * n);
                        for b in 0..batch {
                            dp.extend_from_slice(&dy[b * total + offset..b * total + offset + n]);
                        }
                        offset += n;
                        contributions.push((p, dp));
                    }
                }
                Op::Reshape(x) => contributions.push((x, dy)),
                Op::Add(a, b) => {
                    contributions.push((a, dy.clone()));
                    contributions.push((b, dy));
                }
                Op::Mul(a, b) => {
                    let av = nodes[a.0].value.data();
                    let bv = nodes[b.0].value.data();
                    contributions.push((a, dy.iter().zip(bv).map(|(&d, &v)| d * v).collect()));
                    contributions.push((b, dy.iter().zip(av).map(|(&d, &v)| d * v).collect()));
                }
                Op::Sum(x) => {
                    let n = nodes[x.0].value.numel();
                    contributions.push((x, vec![dy[0]; n]));
                }
                Op::FocalLoss {
                    logits,
                    targets,
                    gamma,
                } => {
                    let zs = nodes[logits.0].value.data();
                    let scale = dy[0] / T::lit(zs.len() as f64);
                    let dz = zs
                        .iter()
                        .zip(&targets)
                        .map(|(&z, &y)| focal_term_grad(z, y, gamma) * scale)
                        .collect();
                    contributions.push((logits, dz));
                }
                Op::Bce { logits, targets } => {
                    let zs = nodes[logits.0].value.data();
                    let scale = dy[0] / T::lit(zs.len() as f64);
                    let dz = zs
                        .iter()
                        .zip(&targets)
                        .map(|(&z, &y)| (kernels::sigmoid(z) - y) * scale)
                        .collect();
                    contributions.push((logits, dz));
                }
            }
            for (v, d) in contributions {
                if !nodes[v.0].requires_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&d) {
                            *a += *b;
                        }
                    }
                    slot => *slot = Some(d),
                }
            }
        }

        let shapes = nodes.into_iter().map(|n| n.value.shape().to_vec());
        let grads = grads
            .into_iter()
            .zip(shapes)
            .map(|(g, shape)| g.map(|d| Tensor::new(shape, d).expect("gradient shape")))
            .collect();
        Ok(Gradients { grads })
    }
}

fn clamped_prob<T: Real>(z: T) -> (T, bool) {
    let p = kernels::sigmoid(z);
    let lo = T::lit(PROB_CLAMP);
    let hi = T::one() - lo;
    if p < lo {
        (lo, true)
    } else if p > hi {
        (hi, true)
    } else {
        (p, false)
    }
}

pub(crate) fn focal_term<T: Real>(z: T, y: T, gamma: T) -> T {
    let (p, _) = clamped_prob(z);
    if y == T::one() {
        -(T::one() - p).powf(gamma) * p.ln()
    } else {
        -p.powf(gamma) * (T::one() - p).ln()
    }
}

fn focal_term_grad<T: Real>(z: T, y: T, gamma: T) -> T {
    let (p, clamped) = clamped_prob(z);
    if clamped {
        return T::zero();
    }
    let q = T::one() - p;
    if y == T::one() {
        gamma * p * q.powf(gamma) * p.ln() - q.powf(gamma + T::one())
    } else {
        -gamma * p.powf(gamma) * q * q.ln() + p.powf(gamma + T::one())
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

