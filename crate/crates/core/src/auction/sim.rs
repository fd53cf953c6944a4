use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Transition, TransitionKind};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

use super::behavior::{behavior_policy, BehaviorParams, BidPolicy};
use super::mechanism::auction_row;
use super::{
    AdvertiserContext, AuctionBatch, Episode, GlobalState, LocalState, Observation, StepOutcome,
};

/// Simulator parameters. The representative advertiser is always the last of
/// `n_advertisers`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_advertisers: usize,
    pub horizon: usize,
    /// Mean impressions per step.
    pub impressions_mean: f64,
    /// Poisson impression counts when true, otherwise exactly
    /// `round(impressions_mean)` per step.
    pub impressions_random: bool,
    pub context_dim: usize,
    /// Advertiser contexts are drawn `N(0, context_scale² I)` per episode.
    pub context_scale: f64,
    pub value_log_mean: f64,
    pub value_log_std: f64,
    /// Amplitude of the time-of-day swing in log impression value.
    pub diurnal_amplitude: f64,
    pub affinity_strength: f64,
    /// Global multiplier on every impression value.
    pub value_scale: f64,
    pub rep_budget: f64,
    pub background_budget: f64,
    /// Budgets are scaled by `U(1 - jitter, 1 + jitter)` per episode.
    pub budget_jitter: f64,
    pub reserve_price: f64,
    pub max_multiplier: f64,
    /// Behavior of background advertisers; slot `i` uses entry
    /// `i % background.len()`.
    pub background: Vec<BehaviorParams>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_advertisers: 3,
            horizon: 16,
            impressions_mean: 20.0,
            impressions_random: true,
            context_dim: 4,
            context_scale: 0.5,
            value_log_mean: 0.0,
            value_log_std: 0.4,
            diurnal_amplitude: 0.3,
            affinity_strength: 1.0,
            value_scale: 1.0,
            rep_budget: 50.0,
            background_budget: 150.0,
            budget_jitter: 0.2,
            reserve_price: 0.01,
            max_multiplier: 3.0,
            background: vec![BehaviorParams {
                mean: 1.0,
                noise: 0.1,
            }],
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_advertisers < 2 {
            return fail(format!("n_advertisers = {} must be >= 2", self.n_advertisers));
        }
        if self.horizon < 1 {
            return fail("horizon must be >= 1".into());
        }
        if !(self.impressions_mean.is_finite() && self.impressions_mean > 0.0) {
            return fail(format!("impressions_mean = {} must be > 0", self.impressions_mean));
        }
        if self.context_dim == 0 {
            return fail("context_dim must be >= 1".into());
        }
        for (name, v) in [
            ("context_scale", self.context_scale),
            ("value_log_std", self.value_log_std),
            ("budget_jitter", self.budget_jitter),
            ("reserve_price", self.reserve_price),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} = {v} must be finite and >= 0"));
            }
        }
        if self.budget_jitter >= 1.0 {
            return fail("budget_jitter must be < 1".into());
        }
        for (name, v) in [
            ("value_scale", self.value_scale),
            ("rep_budget", self.rep_budget),
            ("background_budget", self.background_budget),
            ("max_multiplier", self.max_multiplier),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} = {v} must be finite and > 0"));
            }
        }
        if self.background.is_empty() {
            return fail("background behavior list is empty".into());
        }
        for b in &self.background {
            b.validate()?;
        }
        Ok(())
    }

    pub fn rep_index(&self) -> usize {
        self.n_advertisers - 1
    }

    pub fn background_params(&self, slot: usize) -> BehaviorParams {
        self.background[slot % self.background.len()]
    }

    fn log_value_mean(&self, t: usize) -> f64 {
        let phase = 2.0 * PI * t as f64 / self.horizon as f64;
        self.value_log_mean + self.diurnal_amplitude * phase.sin()
    }

    /// Expected impression value for an advertiser with context `x` at step `t`.
    pub fn value_forecast(&self, x: &[f64], t: usize) -> f64 {
        let norm2: f64 = x.iter().map(|v| v * v).sum();
        let c = self.affinity_strength;
        self.value_scale
            * (self.log_value_mean(t)
                + 0.5 * self.value_log_std * self.value_log_std
                + 0.5 * c * c * norm2 / self.context_dim as f64)
                .exp()
    }

    /// Draws per-episode advertiser contexts and budgets.
    pub fn draw_contexts(&self, rng: &mut Rng) -> Vec<AdvertiserContext> {
        (0..self.n_advertisers)
            .map(|i| {
                let x = (0..self.context_dim)
                    .map(|_| self.context_scale * Distribution::<f64>::sample(&StandardNormal, rng))
                    .collect();
                let jitter = if self.budget_jitter > 0.0 {
                    rng.random_range(1.0 - self.budget_jitter..1.0 + self.budget_jitter)
                } else {
                    1.0
                };
                let base = if i == self.rep_index() {
                    self.rep_budget
                } else {
                    self.background_budget
                };
                AdvertiserContext {
                    id: i as u64,
                    x,
                    budget: base * jitter,
                }
            })
            .collect()
    }

    /// Draws one step's impressions. The number of draws does not depend on
    /// advertiser order, so permuting advertisers permutes value columns only.
    pub fn draw_batch(&self, contexts: &[AdvertiserContext], t: usize, rng: &mut Rng) -> AuctionBatch {
        let m = if self.impressions_random {
            let d = Poisson::new(self.impressions_mean).expect("validated mean");
            d.sample(rng) as usize
        } else {
            self.impressions_mean.round() as usize
        };
        let mu = self.log_value_mean(t);
        let scale = self.affinity_strength / (self.context_dim as f64).sqrt();
        let mut ys = Vec::with_capacity(m);
        let mut values = Vec::with_capacity(m);
        for _ in 0..m {
            let y: Vec<f64> = (0..self.context_dim).map(|_| StandardNormal.sample(rng)).collect();
            let z: f64 = StandardNormal.sample(rng);
            let base = self.value_scale * (mu + self.value_log_std * z).exp();
            let row = contexts
                .iter()
                .map(|c| {
                    let dot: f64 = c.x.iter().zip(&y).map(|(a, b)| a * b).sum();
                    base * (scale * dot).exp()
                })
                .collect();
            ys.push(y);
            values.push(row);
        }
        AuctionBatch {
            contexts: ys,
            values,
        }
    }

    pub fn initial_state(&self, contexts: &[AdvertiserContext]) -> GlobalState {
        GlobalState {
            locals: contexts
                .iter()
                .map(|c| LocalState {
                    time_left: 1.0,
                    budget_left: 1.0,
                    spend_speed: 0.0,
                    last_reward: 0.0,
                    last_cost: 0.0,
                    value_forecast: self.value_forecast(&c.x, 0),
                })
                .collect(),
            t: 0,
        }
    }
}

/// Advances the auction system by one step.
///
/// Impressions are auctioned in order. When the winner of an impression cannot
/// afford its price it goes offline: it is removed from that impression's
/// auction (which is re-run without it) and from every later auction. Its
/// stranded remainder is reported as `budget_left = 0`, so "online" is
/// exactly `budget_left > 0`.
pub fn step(
    cfg: &SimConfig,
    gs: &GlobalState,
    contexts: &[AdvertiserContext],
    joint_bids: &[f64],
    rng: &mut Rng,
) -> Result<(StepOutcome, GlobalState)> {
    let n = gs.n();
    if gs.t >= cfg.horizon {
        return Err(Error::EpisodeOver {
            t: gs.t,
            horizon: cfg.horizon,
        });
    }
    if contexts.len() != n || joint_bids.len() != n {
        return Err(Error::shape(
            "step",
            format!("{} locals, {} contexts, {} bids", n, contexts.len(), joint_bids.len()),
        ));
    }
    if let Some(b) = joint_bids.iter().find(|b| !b.is_finite() || **b < 0.0) {
        return Err(Error::InvalidArgument(format!("bid {b} must be finite and >= 0")));
    }

    let batch = cfg.draw_batch(contexts, gs.t, rng);
    let ids: Vec<u64> = contexts.iter().map(|c| c.id).collect();
    let mut eligible: Vec<bool> = gs.locals.iter().map(LocalState::is_online).collect();
    let mut remaining: Vec<f64> = gs
        .locals
        .iter()
        .zip(contexts)
        .map(|(l, c)| l.budget_left * c.budget)
        .collect();
    let mut depleted = vec![false; n];
    let mut allocation = Vec::with_capacity(batch.len());
    let mut prices = Vec::with_capacity(batch.len());
    let mut rewards = vec![0.0; n];
    let mut costs = vec![0.0; n];

    for row in &batch.values {
        let mut g = vec![0u8; n];
        let mut c = vec![0.0; n];
        while let Some(o) = auction_row(joint_bids, row, &ids, &eligible, cfg.reserve_price) {
            if o.price > remaining[o.winner] {
                eligible[o.winner] = false;
                depleted[o.winner] = true;
                continue;
            }
            g[o.winner] = 1;
            c[o.winner] = o.price;
            remaining[o.winner] -= o.price;
            rewards[o.winner] += row[o.winner];
            costs[o.winner] += o.price;
            break;
        }
        allocation.push(g);
        prices.push(c);
    }

    let t_next = gs.t + 1;
    let locals = (0..n)
        .map(|i| {
            let budget = contexts[i].budget;
            let spent_total = budget * (1.0 - gs.locals[i].budget_left) + costs[i];
            LocalState {
                time_left: (cfg.horizon - t_next) as f64 / cfg.horizon as f64,
                budget_left: if depleted[i] {
                    0.0
                } else {
                    (remaining[i] / budget).clamp(0.0, 1.0)
                },
                spend_speed: spent_total / t_next as f64,
                last_reward: rewards[i],
                last_cost: costs[i],
                value_forecast: cfg.value_forecast(&contexts[i].x, t_next),
            }
        })
        .collect();

    Ok((
        StepOutcome {
            allocation,
            prices,
            batch,
            rewards,
            costs,
            depleted,
        },
        GlobalState { locals, t: t_next },
    ))
}

/// The representative advertiser's observation: its own local state only.
pub fn observe(gs: &GlobalState) -> Observation {
    *gs.locals.last().expect("non-empty state")
}

/// Stateful wrapper around [`step`] for one episode.
pub struct Simulator {
    cfg: SimConfig,
    contexts: Vec<AdvertiserContext>,
    state: GlobalState,
    impressions: Rng,
}

impl Simulator {
    /// Contexts, budgets and the impression stream are all derived from
    /// `seed`; bidding policies use separate streams, so two policies run on
    /// the same seed face identical impressions.
    pub fn new(cfg: &SimConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let contexts = cfg.draw_contexts(&mut rng::stream(seed, "contexts", 0));
        let state = cfg.initial_state(&contexts);
        Ok(Simulator {
            cfg: cfg.clone(),
            contexts,
            state,
            impressions: rng::stream(seed, "impressions", 0),
        })
    }

    pub fn state(&self) -> &GlobalState {
        &self.state
    }

    pub fn contexts(&self) -> &[AdvertiserContext] {
        &self.contexts
    }

    pub fn is_done(&self) -> bool {
        self.state.t >= self.cfg.horizon
    }

    /// Bids of offline advertisers are replaced by zero.
    pub fn effective_bids(&self, bids: &[f64]) -> Vec<f64> {
        bids.iter()
            .zip(&self.state.locals)
            .map(|(&b, l)| if l.is_online() { b } else { 0.0 })
            .collect()
    }

    pub fn step(&mut self, joint_bids: &[f64]) -> Result<StepOutcome> {
        let (outcome, next) = step(
            &self.cfg,
            &self.state,
            &self.contexts,
            joint_bids,
            &mut self.impressions,
        )?;
        self.state = next;
        Ok(outcome)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub gmv: f64,
    pub cost: f64,
    pub budget: f64,
    /// Step during which the representative ran out of budget.
    pub depleted_at: Option<usize>,
    /// Steps the representative took part in, `depleted_at + 1` or the horizon.
    pub steps_online: usize,
}

/// Runs one ground-truth episode with the given representative policy.
pub fn run_episode(
    rep_policy: &mut dyn BidPolicy,
    cfg: &SimConfig,
    seed: u64,
    episode_id: u64,
) -> Result<Episode> {
    let mut sim = Simulator::new(cfg, seed)?;
    let mut bg_rng = rng::stream(seed, "background", 0);
    let mut rep_rng = rng::stream(seed, "representative", 0);
    let n = cfg.n_advertisers;
    let rep = cfg.rep_index();
    let mut transitions = Vec::with_capacity(cfg.horizon);
    let mut gmv = 0.0;
    let mut cost = 0.0;
    let mut depleted_at = None;

    while !sim.is_done() {
        let state = sim.state().clone();
        let obs = observe(&state);
        let mut bids = vec![0.0; n];
        for (slot, b) in bids.iter_mut().enumerate().take(rep) {
            *b = behavior_policy(
                &state.locals[slot],
                &cfg.background_params(slot),
                cfg.max_multiplier,
                &mut bg_rng,
            );
        }
        let rep_bid = rep_policy.bid(&obs, &mut rep_rng);
        if !rep_bid.is_finite() {
            return Err(Error::NonFinite {
                context: "representative policy".into(),
                detail: format!("bid {rep_bid} at t = {}", state.t),
            });
        }
        bids[rep] = rep_bid.clamp(0.0, cfg.max_multiplier);
        let bids = sim.effective_bids(&bids);
        let outcome = sim.step(&bids)?;
        gmv += outcome.rewards[rep];
        cost += outcome.costs[rep];
        if outcome.depleted[rep] && depleted_at.is_none() {
            depleted_at = Some(state.t);
        }
        transitions.push(Transition {
            global_state: state.flatten(),
            joint_action: bids,
            reward: outcome.rewards[rep],
            cost: outcome.costs[rep],
            next_global_state: sim.state().flatten(),
            kind: TransitionKind::Real,
            episode_id,
            t: state.t,
        });
    }

    let budget = sim.contexts()[rep].budget;
    Ok(Episode {
        transitions,
        summary: EpisodeSummary {
            gmv,
            cost,
            budget,
            depleted_at,
            steps_online: depleted_at.map_or(cfg.horizon, |d| d + 1),
        },
    })
}

/// Re-runs recorded joint actions from a fresh simulator on `seed` and
/// returns the largest absolute deviation between recorded and replayed next
/// states.
pub fn replay_episode(cfg: &SimConfig, seed: u64, transitions: &[Transition]) -> Result<f64> {
    let mut sim = Simulator::new(cfg, seed)?;
    let mut max_dev = 0.0f64;
    for tr in transitions {
        if tr.t != sim.state().t {
            return Err(Error::InvalidArgument(format!(
                "transition at t = {} does not follow simulator step {}",
                tr.t,
                sim.state().t
            )));
        }
        sim.step(&tr.joint_action)?;
        for (a, b) in sim.state().flatten().iter().zip(&tr.next_global_state) {
            max_dev = max_dev.max((a - b).abs());
        }
    }
    Ok(max_dev)
}
