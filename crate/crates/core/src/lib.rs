//! Learned progress-distribution rewards for goal-conditioned control.
//!
//! A [`ProgressNet`](nn::ProgressNet) is trained on action-free expert
//! trajectories to predict a Gaussian over how far a frame lies between an
//! initial and a goal frame. Its mean, penalized by the predicted entropy,
//! serves as a dense reward for online Q-learning (with push-back refinement
//! on the learner's own rollouts) and as a per-transition weight for
//! reward-weighted behavior cloning.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which the command-line tool uses.

pub mod data;
pub mod env;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod reward;
pub mod rl;
pub mod rwr;
pub mod scalar;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ProgressModel = nn::ProgressNet<f64>;
pub type ProgressModelF32 = nn::ProgressNet<f32>;
pub type Gaussian = nn::GaussianParams<f64>;
pub type QPolicy = rl::QPolicy<f64>;
pub type BcPolicy = rwr::BcPolicy<f64>;
pub type Optimizer = nn::Adam<f64>;
