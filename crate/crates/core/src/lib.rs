//! Dual-view, phase-aware micro-expression recognition from dense optical
//! flow.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensorgrad`]: tensors, reverse-mode autodiff, layers, focal loss, Adam.
//! * [`optflow`]: Farneback dense flow, motion intensity, apex detection and
//!   phase features.
//! * [`pipeline`]: view splitting, face boxes, cropping, normalization,
//!   sample construction, the synthetic sequence generator and manifests.
//! * [`model`]: the triple-stream attention network.
//! * [`training`]: the seeded training loop with early stopping.
//! * [`evaluation`]: per-class F1, macro-F1, threshold sweeps and reports.
//! * [`workflow`]: the staged runs wired together by the command-line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod digest;
pub mod evaluation;
pub mod heap;
pub mod error;
pub mod model;
pub mod optflow;
pub mod pipeline;
pub mod types;
pub mod tensorgrad;
pub mod training;
pub mod workflow;

pub use error::{Error, Result};
