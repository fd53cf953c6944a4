use serde::{Deserialize, Serialize};

use crate::diffcore::{grad_check_graph, AdamConfig, GradCheckConfig, GradCheckReport, Tape, Tensor};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

use super::nets::{ObsScaler, Policy, QNetwork};
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    /// Reward-uncertainty penalty coefficient.
    pub lambda: f64,
    pub gamma: f64,
    pub q_lr: f64,
    pub policy_lr: f64,
    /// Polyak rate of the target critic.
    pub tau: f64,
    pub hidden: usize,
    pub w_max: f64,
    pub grid_points: usize,
    pub init_action: f64,
    pub init_log_std: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            lambda: 3.0,
            gamma: 1.0,
            q_lr: 1e-3,
            policy_lr: 3e-4,
            tau: 0.005,
            hidden: 64,
            w_max: 3.0,
            grid_points: 11,
            init_action: 1.0,
            init_log_std: -1.0,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda = {} must be finite and >= 0", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail(format!("gamma = {} must lie in [0, 1]", self.gamma));
        }
        if !(self.q_lr > 0.0 && self.policy_lr > 0.0) {
            return fail("learning rates must be > 0".into());
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail(format!("tau = {} must lie in (0, 1]", self.tau));
        }
        if self.hidden == 0 {
            return fail("hidden must be >= 1".into());
        }
        if !(self.w_max > 0.0 && self.w_max.is_finite()) {
            return fail(format!("w_max = {} must be > 0", self.w_max));
        }
        if self.grid_points < 2 {
            return fail("grid_points must be >= 2".into());
        }
        if !(self.init_action > 0.0 && self.init_action < self.w_max) {
            return fail(format!("init_action = {} must lie inside (0, w_max)", self.init_action));
        }
        Ok(())
    }

    /// `grid_points` evenly spaced actions from 0 to `w_max`.
    pub fn action_grid(&self) -> Vec<f64> {
        let g = self.grid_points - 1;
        (0..=g).map(|i| self.w_max * i as f64 / g as f64).collect()
    }
}

/// Critic regression minibatch.
#[derive(Clone, Debug)]
pub struct QBatch {
    pub obs: Tensor,
    pub actions: Vec<f64>,
    pub targets: Vec<f64>,
}

/// Critic, target critic and policy of one training run.
#[derive(Clone, Debug)]
pub struct LearnerState {
    pub q: QNetwork,
    pub q_target: QNetwork,
    pub policy: Policy,
    pub lambda: f64,
    pub gamma: f64,
    pub q_lr: f64,
    pub policy_lr: f64,
    pub tau: f64,
    pub action_grid: Vec<f64>,
}

impl LearnerState {
    pub fn new(cfg: &LearnerConfig, scaler: ObsScaler, value_scale: f64, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let q = QNetwork::new(
            scaler.clone(),
            cfg.hidden,
            cfg.w_max,
            value_scale,
            rng::derive_seed(seed, "critic", 0),
        )?;
        let policy = Policy::new(
            scaler,
            cfg.hidden,
            cfg.w_max,
            cfg.init_action,
            cfg.init_log_std,
            rng::derive_seed(seed, "actor", 0),
        )?;
        Ok(LearnerState {
            q_target: q.snapshot(),
            q,
            policy,
            lambda: cfg.lambda,
            gamma: cfg.gamma,
            q_lr: cfg.q_lr,
            policy_lr: cfg.policy_lr,
            tau: cfg.tau,
            action_grid: cfg.action_grid(),
        })
    }

    /// One Adam step on `mean (Q(o, a) - target)^2`, then a Polyak update of
    /// the target critic. Returns the pre-step loss.
    pub fn q_update(&mut self, batch: &QBatch) -> Result<f64> {
        let b = batch.actions.len();
        if batch.obs.rows() != b || batch.targets.len() != b {
            return Err(Error::shape(
                "q_update",
                format!("{} observations, {b} actions, {} targets", batch.obs.rows(), batch.targets.len()),
            ));
        }
        if let Some(t) = batch.targets.iter().find(|t| !t.is_finite()) {
            return Err(Error::Diverged(format!("critic target {t}")));
        }
        let mut tape = Tape::new();
        let o = tape.constant(self.q.scaler.apply(&batch.obs)?);
        let a = tape.constant(Tensor::new(b, 1, batch.actions.clone())?);
        let y = tape.constant(Tensor::new(b, 1, batch.targets.clone())?);
        let q = self.q.forward(&mut tape, &self.q.params.train(), o, a)?;
        let d = tape.sub(q, y)?;
        let sq = tape.square(d);
        let loss = tape.mean_all(sq);
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Diverged(format!("critic loss {value}")));
        }
        let grads = tape.backward(loss)?.into_params();
        self.q.params.adam_step(&grads, &AdamConfig::with_lr(self.q_lr))?;
        self.q_target.params.polyak_from(&self.q.params, self.tau)?;
        Ok(value)
    }

    /// One Adam step on `-mean Q(o, a)` with `a` drawn by reparameterization
    /// from the policy; the critic is held fixed. Returns the pre-step loss.
    pub fn policy_update(&mut self, obs: &Tensor, rng: &mut Rng) -> Result<f64> {
        let eps: Vec<f64> = (0..obs.rows()).map(|_| StandardNormal.sample(rng)).collect();
        let mut tape = Tape::new();
        let po = tape.constant(self.policy.scaler.apply(obs)?);
        let qo = tape.constant(self.q.scaler.apply(obs)?);
        let a = self.policy.rsample(&mut tape, &self.policy.params.train(), po, &eps)?;
        let q = self.q.forward(&mut tape, &self.q.params.frozen(), qo, a)?;
        let mean_q = tape.mean_all(q);
        let loss = tape.scale(mean_q, -1.0);
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Diverged(format!("policy loss {value}")));
        }
        let grads = tape.backward(loss)?.into_params();
        self.policy.params.adam_step(&grads, &AdamConfig::with_lr(self.policy_lr))?;
        Ok(value)
    }

    /// Finite-difference check of the policy-loss gradient at fixed
    /// reparameterization noise `eps` (one value per observation row).
    pub fn grad_check_policy(&self, obs: &Tensor, eps: &[f64], cfg: &GradCheckConfig, rng: &mut Rng) -> Result<GradCheckReport> {
        let po = self.policy.scaler.apply(obs)?;
        let qo = self.q.scaler.apply(obs)?;
        grad_check_graph(
            &self.policy.params,
            |tape, bind| {
                let p = tape.constant(po.clone());
                let q = tape.constant(qo.clone());
                let a = self.policy.rsample(tape, bind, p, eps)?;
                let v = self.q.forward(tape, &self.q.params.frozen(), q, a)?;
                let m = tape.mean_all(v);
                Ok(tape.scale(m, -1.0))
            },
            cfg,
            rng,
        )
    }
}
