//! A desk-scale laboratory for optimized probability-gradient clipping in
//! noisy-label learning.
//!
//! The library is organized around a feedback loop: per-sample cross-entropy
//! values feed a FIFO queue ([`harness::LossQueue`]), a two-component Gaussian
//! mixture is fitted on the queue contents ([`gmm`]), the fitted mixture drives
//! a quadrature estimate of the noisy-to-clean clipped-gradient ratio and a
//! binary search for the clipping threshold ([`threshold`]), and the resulting
//! threshold parameterizes a Huberized loss ([`loss`]) used by the training
//! loop ([`harness::train()`]) over a small MLP ([`model`]). Label corruption
//! with reproducible flip masks lives in [`noise`].

pub mod gmm;
pub mod harness;
pub mod loss;
pub mod model;
pub mod noise;
pub mod threshold;

/// Hard ceiling for any clipping threshold.
///
/// A cross-entropy gradient norm of 1e6 corresponds to a predicted probability
/// of 1e-6; thresholds above this never fire on realistically trained models,
/// so "no clipping" is represented by this value.
pub const TAU_CEILING: f64 = 1e6;

/// Probability floor applied before logarithms and divisions so that loss
/// values and gradient norms stay finite under float rounding.
pub const P_FLOOR: f64 = 1e-12;
