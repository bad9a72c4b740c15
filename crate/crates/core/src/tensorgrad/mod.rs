//! Dense tensors with reverse-mode differentiation, plus the layer
//! primitives, focal loss and Adam optimizer the network needs.
//!
//! Convolutions follow the cross-correlation convention: the kernel is not
//! flipped.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod graph;
pub mod kernels;
mod real;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Blob, Checkpoint};
pub use gradcheck::{gradcheck, gradcheck_multi, gradcheck_steps, GradcheckReport};
pub use graph::{BatchNormStats, Gradients, Graph, Mode, Var, PROB_CLAMP};
pub use real::{DType, Real};
pub use tensor::Tensor;

/// Focal loss evaluated directly on tensors, without recording a graph.
pub fn focal_loss_value<T: Real>(
    logits: &Tensor<T>,
    targets: &Tensor<T>,
    gamma: f64,
) -> crate::Result<T> {
    let mut g = Graph::new();
    let z = g.input(logits.clone())?;
    let l = g.focal_loss(z, targets, gamma)?;
    Ok(g.value(l).data()[0])
}

#[cfg(test)]
mod tests;
