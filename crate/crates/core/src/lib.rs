//! Three-branch full-reference image quality assessment at desk scale.
//!
//! The crate provides, from the ground up:
//!
//! * [`tensor`] / [`graph`] — dense `(n, c, h, w)` tensors with define-by-run
//!   reverse-mode differentiation and a finite-difference [`gradcheck`]er;
//! * [`model`] — the three-branch model (frozen full-reference, trainable
//!   full-reference, no-reference) with a fully connected regression head;
//! * [`data`] — manifest ingestion, image decode/normalize, grouped splits,
//!   flip augmentation and a synthetic-distortion benchmark generator;
//! * [`train`] — MSE objective, Adam with a cosine learning-rate schedule,
//!   and the training loop;
//! * [`metrics`] — Spearman and Kendall rank correlation and dataset
//!   evaluation.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
mod kernels;
pub mod metrics;
pub mod model;
mod seeds;
pub mod tensor;
pub mod train;
pub mod weights;

pub use error::{Error, Result};
pub use graph::{Graph, NodeId};
pub use tensor::{Parameter, Shape, Tensor};
