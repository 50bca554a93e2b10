//! Gradient dynamics of reward-model-free preference optimisation.
//!
//! - [`losses`]: closed-form objectives and their likelihood gradients.
//! - [`policy`]: an MLP categorical policy with manual backprop.
//! - [`world`]: the 4 × 10 toy world and its pair stream.
//! - [`trainer`]: policy and reward-model training loops with metrics.
//! - [`oracle`]: finite-difference and asymptotic checks.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chart;
pub mod config;
pub mod losses;
pub mod numfmt;
pub mod oracle;
pub mod policy;
pub mod table;
pub mod trainer;
pub mod world;

pub use losses::{GradientPair, LikelihoodPoint, LimitClass, LossError, Objective, RewardPoint};
pub use policy::{FitConfig, MlpPolicy, OptimizerKind, ReferencePolicy};
pub use trainer::{MetricsLog, MetricsRow, TrainConfig, TrainError};
pub use world::{PairingMode, Scenario, ToySpace};
