//! Adversarial fine-tuning with selective parameter updates, at desk scale.
//!
//! The training objective combines a clean task loss, the same loss on a
//! single-step adversarially perturbed embedding, and a bidirectional-KL
//! consistency term. Updates are filtered by a per-scalar stochastic mask:
//! squared gradients accumulate into importance scores over each refresh
//! window, scores are rank-normalized and passed through a logistic gate,
//! and each scalar keeps its gradient with the resulting probability
//! (optionally scaled by `1/p`, which makes the masked update an unbiased
//! estimator of the full gradient).
//!
//! The crate also carries the shared evaluation machinery: accuracy on
//! clean / shifted / adversarial splits, expected calibration error,
//! anomaly-detection AUROC from maximum softmax probability, the relative
//! improvement aggregate, mean competition ranks, and a Monte-Carlo
//! verifier for the masked estimator's moment formulas.
//!
//! `no_std`-compatible (with `alloc`); the companion CLI crate carries all
//! IO and file formats.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod adversarial;
pub mod error;
pub mod estimator;
pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod masking;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{CoreError, CoreResult};
pub use tensor::Tensor;
