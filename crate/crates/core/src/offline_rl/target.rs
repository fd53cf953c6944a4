use rand_distr::{Distribution, StandardNormal};

use crate::auction::LOCAL_STATE_DIM;
use crate::diffcore::Tensor;
use crate::env_model::{reward_std, sample_members, BatchPrediction, EnsembleModel};
use crate::error::{Error, Result};
use crate::rng::Rng;

use super::nets::QNetwork;

/// Per-member Gaussian moments of the representative's next observation,
/// stored member-major (`k * obs_dim` values each).
#[derive(Clone, Debug, PartialEq)]
pub struct NextObsMoments {
    pub k: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl NextObsMoments {
    /// Extracts the representative (last) block of each member's next-state
    /// prediction at `row`.
    pub fn from_predictions(preds: &[BatchPrediction], row: usize) -> Self {
        let width = preds[0].mean.cols();
        let start = width - 1 - LOCAL_STATE_DIM;
        let mut mean = Vec::with_capacity(preds.len() * LOCAL_STATE_DIM);
        let mut var = Vec::with_capacity(preds.len() * LOCAL_STATE_DIM);
        for p in preds {
            mean.extend_from_slice(&p.mean.row(row)[start..width - 1]);
            var.extend_from_slice(&p.variance.row(row)[start..width - 1]);
        }
        NextObsMoments {
            k: preds.len(),
            mean,
            var,
        }
    }

    /// Replaces every member's remaining-time prediction with the known
    /// value.
    pub fn pin_time_left(&mut self, time_left: f64) {
        let d = self.mean.len() / self.k;
        for m in 0..self.k {
            self.mean[m * d] = time_left;
            self.var[m * d] = 0.0;
        }
    }

    /// One draw per member; the remaining budget is clamped to `[0, 1]`.
    pub fn sample(&self, rng: &mut Rng) -> Vec<Vec<f64>> {
        let d = self.mean.len() / self.k;
        (0..self.k)
            .map(|m| {
                let mut obs: Vec<f64> = (0..d)
                    .map(|f| {
                        let z: f64 = StandardNormal.sample(rng);
                        self.mean[m * d + f] + self.var[m * d + f].sqrt() * z
                    })
                    .collect();
                obs[1] = obs[1].clamp(0.0, 1.0);
                obs
            })
            .collect()
    }
}

/// `(reward - lambda * sigma) + gamma * min(next_values)`; an empty set of
/// next values marks a terminal step.
pub fn robust_target_from_values(reward: f64, lambda: f64, sigma: f64, gamma: f64, next_values: &[f64]) -> f64 {
    let tail = if next_values.is_empty() {
        0.0
    } else {
        gamma * next_values.iter().copied().fold(f64::INFINITY, f64::min)
    };
    reward - lambda * sigma + tail
}

/// Targets for a minibatch whose rewards are already final (penalized for
/// imaginary transitions, logged for real ones). Each non-terminal row draws
/// one next observation per member and takes the worst member's greedy value.
pub fn robust_targets(
    rewards: &[f64],
    moments: &[&NextObsMoments],
    terminal: &[bool],
    q_target: &QNetwork,
    grid: &[f64],
    gamma: f64,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let b = rewards.len();
    if moments.len() != b || terminal.len() != b {
        return Err(Error::shape(
            "robust_targets",
            format!("{b} rewards, {} moments, {} terminal flags", moments.len(), terminal.len()),
        ));
    }
    let mut rows = Vec::new();
    let mut owner = Vec::new();
    for r in 0..b {
        if terminal[r] {
            continue;
        }
        for obs in moments[r].sample(rng) {
            rows.push(obs);
            owner.push(r);
        }
    }
    let mut worst = vec![f64::INFINITY; b];
    if !rows.is_empty() {
        let values = q_target.max_over_grid(&Tensor::from_rows(&rows)?, grid)?;
        for (v, &r) in values.iter().zip(&owner) {
            worst[r] = worst[r].min(*v);
        }
    }
    Ok((0..b)
        .map(|r| {
            let next: &[f64] = if terminal[r] { &[] } else { std::slice::from_ref(&worst[r]) };
            robust_target_from_values(rewards[r], 0.0, 0.0, gamma, next)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustTarget {
    pub value: f64,
    /// Reward drawn from the uniformly chosen member.
    pub reward_sample: f64,
    /// Spread of the members' reward means.
    pub sigma: f64,
    pub member: usize,
    /// Greedy target value of each member's next-state draw.
    pub next_values: Vec<f64>,
}

/// Robust target of one model transition at `(gs, joint_action)`.
#[allow(clippy::too_many_arguments)]
pub fn robust_target(
    gs: &[f64],
    joint_action: &[f64],
    ens: &EnsembleModel,
    q_target: &QNetwork,
    grid: &[f64],
    lambda: f64,
    gamma: f64,
    terminal: bool,
    rng: &mut Rng,
) -> Result<RobustTarget> {
    let preds = ens.member_predictions(&Tensor::row_vector(gs), &Tensor::row_vector(joint_action))?;
    let draw = sample_members(&preds, 0, rng);
    let sigma = reward_std(&preds, 0);
    let next_values = if terminal {
        Vec::new()
    } else {
        let obs = NextObsMoments::from_predictions(&preds, 0).sample(rng);
        q_target.max_over_grid(&Tensor::from_rows(&obs)?, grid)?
    };
    Ok(RobustTarget {
        value: robust_target_from_values(draw.reward, lambda, sigma, gamma, &next_values),
        reward_sample: draw.reward,
        sigma,
        member: draw.member,
        next_values,
    })
}
