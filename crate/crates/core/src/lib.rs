//! Focal-loss posterior recovery and calibration toolkit.
//!
//! Models trained with the focal loss produce scores that are systematically
//! under- (and sometimes over-) confident relative to the true class posterior.
//! This crate provides the closed-form map back to the posterior, the
//! thresholds that delimit the two regimes, risk minimizers to generate
//! ground truth, calibration metrics, temperature scaling, and a small
//! synthetic training pipeline that exhibits the effect end to end.

pub mod calibrate;
pub mod error;
pub mod focal;
pub mod metrics;
pub mod minimizer;
pub mod optim;
pub mod simplex;
pub mod synth;
pub mod thresholds;

pub use error::{Error, Result};
pub use focal::{
    cross_entropy, focal_loss, h_transform, in_sk, psi_transform, recover_binary, varphi, Gamma, LossKind,
    LossSpec,
};
pub use metrics::{BinningReport, PredictionSet, ScoreKind};
pub use simplex::{argmax, ProbVector};
pub use thresholds::{ConfidenceDirection, ConfidenceRegion, ThresholdPair};
