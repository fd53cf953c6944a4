//! Permutation-equivariant model-based offline reinforcement learning for
//! budget-constrained auto-bidding.
//!
//! The crate is organized bottom-up:
//!
//! - [`equivariance`]: permutation algebra, orbit averaging and equivariance checks.
//! - [`auction`]: the ground-truth second-price auction simulator.
//! - [`dataset`]: offline transition storage, JSON-lines I/O, splits and the
//!   sliced Wasserstein trajectory distance.
//! - [`diffcore`]: a small reverse-mode differentiation tape with the layers
//!   the models need and an Adam optimizer.
//! - [`env_model`]: the permutation-equivariant Gaussian environment model and
//!   its ensemble.
//! - [`offline_rl`]: Q-network, squashed-Gaussian policy and the uncertainty
//!   penalized Bellman target.
//! - [`trainer`]: the outer training loop, evaluation, baselines and ablations.
//! - [`config`]: the run configuration document shared with the CLI.

pub mod auction;
pub mod config;
pub mod dataset;
pub mod diffcore;
pub mod env_model;
pub mod equivariance;
pub mod error;
pub mod offline_rl;
pub mod rng;
pub mod trainer;

pub use auction::{
    AdvertiserContext, AuctionBatch, BehaviorParams, Episode, GlobalState, LocalState, SimConfig,
    StepOutcome,
};
pub use dataset::{DataSet, Transition, TransitionKind};
pub use env_model::{EnsembleModel, EnvModel, GaussianPrediction};
pub use equivariance::{Permutation, SetFunction};
pub use error::{Error, Result};
pub use offline_rl::{LearnerState, Policy, QNetwork};
pub use trainer::{EvalReport, TrainConfig};
