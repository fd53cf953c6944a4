//! Critic and actor networks, the uncertainty-penalized Bellman target and
//! the actor-critic updates.
//!
//! The maximum over next actions is taken over a uniform action grid. The
//! target penalizes twice: the reward is reduced by `lambda` times the
//! ensemble's reward spread, and the continuation value is the minimum over
//! one next-state draw per ensemble member.

mod learner;
mod nets;
mod target;
#[cfg(test)]
mod tests;

pub use learner::{LearnerConfig, LearnerState, QBatch};
pub use nets::{squash, unsquash, ActMode, ObsScaler, Policy, QNetwork, LOG_STD_MAX, LOG_STD_MIN};
pub use target::{robust_target, robust_target_from_values, robust_targets, NextObsMoments, RobustTarget};
