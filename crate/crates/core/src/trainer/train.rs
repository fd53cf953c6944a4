use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::auction::LOCAL_STATE_DIM;
use crate::dataset::{collect_real_data, DataSet};
use crate::diffcore::Tensor;
use crate::env_model::{EnsembleModel, ModelKind, ModelSpec};
use crate::error::{Error, Result};
use crate::offline_rl::{robust_targets, LearnerState, NextObsMoments, ObsScaler, Policy, QBatch};
use crate::rng;

use super::config::TrainConfig;
use super::rollout::{rollout_imaginary, ImaginaryStep};

/// Ensemble-derived quantities of the real transitions, computed once per
/// dataset and ensemble.
#[derive(Clone, Debug)]
pub struct RealCache {
    pub moments: Vec<NextObsMoments>,
    pub terminal: Vec<bool>,
}

impl RealCache {
    pub fn new(ens: &EnsembleModel, data: &DataSet) -> Result<Self> {
        let mut moments = Vec::with_capacity(data.len());
        for chunk in data.transitions.chunks(512) {
            let s = Tensor::from_rows(&chunk.iter().map(|t| t.global_state.clone()).collect::<Vec<_>>())?;
            let a = Tensor::from_rows(&chunk.iter().map(|t| t.joint_action.clone()).collect::<Vec<_>>())?;
            let preds = ens.member_predictions(&s, &a)?;
            moments.extend(chunk.iter().enumerate().map(|(r, tr)| {
                let mut m = NextObsMoments::from_predictions(&preds, r);
                m.pin_time_left(tr.next_observation()[0]);
                m
            }));
        }
        let terminal = data.transitions.iter().map(|t| t.t + 1 >= data.meta.horizon).collect();
        Ok(RealCache { moments, terminal })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub q_loss: f64,
    pub policy_loss: f64,
    /// Mean penalized return per branch start of this iteration's rollouts.
    pub model_return: f64,
    pub mean_sigma: f64,
    pub mean_action: f64,
    pub imaginary: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub iterations: Vec<IterationLog>,
    pub converged: bool,
}

/// Number of imaginary rows in a minibatch of `batch`: `round(ratio * batch)`
/// (halves away from zero), or zero when there is no imaginary data.
pub fn imaginary_rows(ratio: f64, batch: usize, available: usize) -> usize {
    if available == 0 {
        0
    } else {
        (ratio * batch as f64).round() as usize
    }
}

/// Mean episode return of the representative in `data`.
pub fn mean_episode_return(data: &DataSet) -> f64 {
    let episodes = data.episode_ids().len().max(1);
    data.transitions.iter().map(|t| t.reward).sum::<f64>() / episodes as f64
}

/// Initial learner for `data`: observation scaling from the representative's
/// logged observations, critic output scaled by the mean episode return.
pub fn init_learner(cfg: &TrainConfig, data: &DataSet, seed: u64) -> Result<LearnerState> {
    let scaler = ObsScaler::fit(&data.observations())?;
    let value_scale = mean_episode_return(data).abs().max(1e-3);
    LearnerState::new(&cfg.learner, scaler, value_scale, rng::derive_seed(seed, "learner", 0))
}

fn relative_change(prev: f64, cur: f64) -> f64 {
    (cur - prev).abs() / prev.abs().max(1e-8)
}

/// The actor-critic loop on real data mixed with fresh penalized model
/// rollouts. Returns the final learner (its policy is the result).
pub fn train_policy(
    cfg: &TrainConfig,
    data: &DataSet,
    ens: &EnsembleModel,
    cache: &RealCache,
    seed: u64,
) -> Result<(LearnerState, TrainingLog)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("real dataset is empty".into()));
    }
    if cache.moments.len() != data.len() || ens.spec().ds != data.meta.ds {
        return Err(Error::InvalidArgument("ensemble cache does not match the dataset".into()));
    }
    let t = &cfg.trainer;
    let lambda = cfg.learner.lambda;
    let mut learner = init_learner(cfg, data, seed)?;
    let mut r = rng::stream(seed, "pemorl-loop", 0);
    let mut log = TrainingLog::default();
    let rep_offset = (data.meta.n - 1) * LOCAL_STATE_DIM;
    let mut calm = 0;
    for iteration in 1..=t.max_iterations {
        let rollout = rollout_imaginary(
            ens,
            &learner.policy,
            data,
            &cfg.sim,
            t.rollout_horizon,
            lambda,
            t.rollout_starts,
            &mut r,
        )?;
        let imag: &[ImaginaryStep] = if t.mixing_ratio > 0.0 { &rollout.steps } else { &[] };
        let n_im = imaginary_rows(t.mixing_ratio, t.batch_size, imag.len());
        let (mut q_sum, mut p_sum) = (0.0, 0.0);
        for _ in 0..t.updates_per_iteration {
            let mut obs = Vec::with_capacity(t.batch_size);
            let mut actions = Vec::with_capacity(t.batch_size);
            let mut rewards = Vec::with_capacity(t.batch_size);
            let mut moments = Vec::with_capacity(t.batch_size);
            let mut terminal = Vec::with_capacity(t.batch_size);
            for k in 0..t.batch_size {
                if k < n_im {
                    let s = &imag[r.random_range(0..imag.len())];
                    obs.push(s.transition.global_state[rep_offset..].to_vec());
                    actions.push(s.transition.rep_action());
                    rewards.push(s.transition.reward);
                    moments.push(&s.moments);
                    terminal.push(s.terminal);
                } else {
                    let j = r.random_range(0..data.len());
                    let tr = &data.transitions[j];
                    obs.push(tr.global_state[rep_offset..].to_vec());
                    actions.push(tr.rep_action());
                    rewards.push(tr.reward);
                    moments.push(&cache.moments[j]);
                    terminal.push(cache.terminal[j]);
                }
            }
            let obs = Tensor::from_rows(&obs)?;
            let targets = robust_targets(
                &rewards,
                &moments,
                &terminal,
                &learner.q_target,
                &learner.action_grid,
                learner.gamma,
                &mut r,
            )?;
            q_sum += learner.q_update(&QBatch {
                obs: obs.clone(),
                actions,
                targets,
            })?;
            p_sum += learner.policy_update(&obs, &mut r)?;
        }
        let steps = rollout.steps.len().max(1) as f64;
        let entry = IterationLog {
            iteration,
            q_loss: q_sum / t.updates_per_iteration as f64,
            policy_loss: p_sum / t.updates_per_iteration as f64,
            model_return: rollout.mean_return,
            mean_sigma: rollout.steps.iter().map(|s| s.sigma).sum::<f64>() / steps,
            mean_action: rollout.steps.iter().map(|s| s.transition.rep_action()).sum::<f64>() / steps,
            imaginary: imag.len(),
        };
        if let Some(prev) = log.iterations.last() {
            if relative_change(prev.model_return, entry.model_return) < t.convergence_tol {
                calm += 1;
            } else {
                calm = 0;
            }
        }
        log.iterations.push(entry);
        if calm >= t.convergence_window {
            log.converged = true;
            break;
        }
    }
    Ok((learner, log))
}

/// Real data, trained ensemble and cache for one seed.
pub struct SeedContext {
    pub seed: u64,
    pub data: DataSet,
    pub ensemble: EnsembleModel,
    pub cache: RealCache,
}

/// The offline dataset of `seed`: `cfg.data.episodes` simulator episodes of
/// the configured behavior policies.
pub fn collect_training_data(cfg: &TrainConfig, seed: u64) -> Result<DataSet> {
    cfg.validate()?;
    collect_real_data(
        &cfg.sim,
        &cfg.data.behaviors,
        cfg.data.episodes,
        rng::derive_seed(seed, "real-data", 0),
    )
}

impl SeedContext {
    pub fn build(cfg: &TrainConfig, seed: u64) -> Result<Self> {
        let data = collect_training_data(cfg, seed)?;
        Self::from_data(cfg, data, seed)
    }

    pub fn from_data(cfg: &TrainConfig, data: DataSet, seed: u64) -> Result<Self> {
        let spec = ModelSpec::new(ModelKind::Pe, data.meta.ds, data.meta.n, &cfg.model)?;
        let (ensemble, _) = EnsembleModel::train(&data, &spec, rng::derive_seed(seed, "ensemble", 0))?;
        let cache = RealCache::new(&ensemble, &data)?;
        Ok(SeedContext {
            seed,
            data,
            ensemble,
            cache,
        })
    }

    pub fn train(&self, cfg: &TrainConfig) -> Result<(LearnerState, TrainingLog)> {
        train_policy(cfg, &self.data, &self.ensemble, &self.cache, self.seed)
    }
}

/// Full pipeline for `cfg.seed`: collect real data, fit the ensemble and run
/// the actor-critic loop.
pub fn pemorl_train(cfg: &TrainConfig) -> Result<(Policy, TrainingLog)> {
    let ctx = SeedContext::build(cfg, cfg.seed)?;
    let (learner, log) = ctx.train(cfg)?;
    Ok((learner.policy, log))
}
