//! Adversarial-training laboratory built around unrealistic feature
//! suppression (UFS): a per-sample, per-channel mask applied to the
//! discriminator's pooled fake features before its final linear layer during
//! generator updates.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense `f64` tensors, layers with hand-written forward and
//!   backward passes, Adam, seeded RNG and a finite-difference oracle.
//! - [`gan`]: generator/discriminator networks with an explicit feature body
//!   and linear head, adversarial losses, gradient penalty and the training
//!   steps.
//! - [`ufs`]: feature statistics, distance ratios and the piecewise-linear
//!   suppression function.
//! - [`selection`]: Top-k / Bottom-k / Random-k sample selection and
//!   Gaussian-density instance selection.
//! - [`eval`]: Fréchet distance, k-NN manifold metrics, mode coverage and a
//!   random-feature image embedder.
//! - [`attribution`]: class activation maps with and without the mask.
//! - [`harness`]: datasets, configuration, file formats and the experiment
//!   runner behind the `ufs-lab` CLI.

pub mod attribution;
pub mod error;
pub mod eval;
pub mod gan;
pub mod harness;
pub mod numerics;
pub mod selection;
pub mod ufs;

pub use error::{Error, Result};
pub use numerics::{SeededRng, Tensor};
