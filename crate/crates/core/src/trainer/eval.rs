use serde::{Deserialize, Serialize};

use crate::auction::{run_episode, BidPolicy, ConstantPolicy, Observation, SimConfig};
use crate::dataset::{episode_seed, sliced_wasserstein};
use crate::error::{Error, Result};
use crate::offline_rl::{ActMode, Policy};
use crate::rng::{self, Rng};

use super::config::EvalConfig;

/// How `online_rate` is defined in every report.
pub const ONLINE_RATE_DEFINITION: &str =
    "mean over episodes of (steps before the representative's budget ran out) / horizon";

/// Adapts a [`Policy`] to the simulator's bidding interface.
pub struct PolicyBidder<'a> {
    pub policy: &'a Policy,
    pub mode: ActMode,
}

impl BidPolicy for PolicyBidder<'_> {
    fn bid(&mut self, obs: &Observation, rng: &mut Rng) -> f64 {
        self.policy.act(&obs.to_vec(), self.mode, rng).expect("observation width matches the policy")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: u64,
    pub gmv: f64,
    pub cost: f64,
    pub steps_online: usize,
}

/// Best constant-multiplier GMV on the evaluation episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RStar {
    pub value: f64,
    pub multiplier: f64,
    /// `(multiplier, mean GMV)` for every grid point.
    pub grid: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub episodes: usize,
    /// Per-episode means.
    pub gmv: f64,
    pub cost: f64,
    /// `gmv / cost`, reported as 0 when nothing was spent.
    pub roi: f64,
    pub online_rate: f64,
    pub online_rate_definition: String,
    pub r_star: f64,
    pub r_star_multiplier: f64,
    pub r_over_rstar: f64,
    /// Sliced Wasserstein distance between visited representative
    /// observations and the reference (real) observations.
    pub wasserstein_to_dr: Option<f64>,
    pub per_episode: Vec<EpisodeRow>,
}

fn eval_seed(seed: u64, e: u64) -> u64 {
    episode_seed(rng::derive_seed(seed, "evaluation", 0), e)
}

struct Rollouts {
    rows: Vec<EpisodeRow>,
    visited: Vec<Vec<f64>>,
}

fn run_many(bidder: &mut dyn BidPolicy, sim: &SimConfig, episodes: usize, seed: u64) -> Result<Rollouts> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    let mut rows = Vec::with_capacity(episodes);
    let mut visited = Vec::new();
    for e in 0..episodes as u64 {
        let ep = run_episode(bidder, sim, eval_seed(seed, e), e)?;
        visited.extend(ep.transitions.iter().map(|t| t.observation().to_vec()));
        rows.push(EpisodeRow {
            episode: e,
            gmv: ep.summary.gmv,
            cost: ep.summary.cost,
            steps_online: ep.summary.steps_online,
        });
    }
    Ok(Rollouts { rows, visited })
}

fn mean_gmv(rows: &[EpisodeRow]) -> f64 {
    rows.iter().map(|r| r.gmv).sum::<f64>() / rows.len() as f64
}

/// Evaluates `grid` evenly spaced constant multipliers on `[0, max_multiplier]`
/// on the evaluation episodes of `seed`. Ties keep the smaller multiplier.
pub fn compute_rstar(sim: &SimConfig, eval: &EvalConfig, seed: u64) -> Result<RStar> {
    let g = eval.rstar_grid.max(2) - 1;
    let mut grid = Vec::with_capacity(g + 1);
    for i in 0..=g {
        let m = sim.max_multiplier * i as f64 / g as f64;
        let out = run_many(&mut ConstantPolicy(m), sim, eval.episodes, seed)?;
        grid.push((m, mean_gmv(&out.rows)));
    }
    let (multiplier, value) = grid
        .iter()
        .copied()
        .fold((0.0, f64::NEG_INFINITY), |best, p| if p.1 > best.1 { p } else { best });
    Ok(RStar {
        value,
        multiplier,
        grid,
    })
}

/// Ground-truth evaluation of any bidder on the evaluation episodes of `seed`.
pub fn evaluate_bidder(
    bidder: &mut dyn BidPolicy,
    label: &str,
    sim: &SimConfig,
    eval: &EvalConfig,
    seed: u64,
    rstar: &RStar,
    reference: Option<&[Vec<f64>]>,
) -> Result<EvalReport> {
    let out = run_many(bidder, sim, eval.episodes, seed)?;
    let n = out.rows.len() as f64;
    let gmv = mean_gmv(&out.rows);
    let cost = out.rows.iter().map(|r| r.cost).sum::<f64>() / n;
    let online_rate = out.rows.iter().map(|r| r.steps_online as f64 / sim.horizon as f64).sum::<f64>() / n;
    let wasserstein_to_dr = match reference {
        Some(reference) => Some(sliced_wasserstein(
            &out.visited,
            reference,
            eval.projections,
            rng::derive_seed(seed, "wasserstein", 0),
        )?),
        None => None,
    };
    Ok(EvalReport {
        label: label.to_string(),
        episodes: out.rows.len(),
        gmv,
        cost,
        roi: if cost > 0.0 { gmv / cost } else { 0.0 },
        online_rate,
        online_rate_definition: ONLINE_RATE_DEFINITION.to_string(),
        r_star: rstar.value,
        r_star_multiplier: rstar.multiplier,
        r_over_rstar: if rstar.value > 0.0 { gmv / rstar.value } else { 0.0 },
        wasserstein_to_dr,
        per_episode: out.rows,
    })
}

/// Evaluates `policy` in mean mode.
pub fn evaluate_policy(
    policy: &Policy,
    sim: &SimConfig,
    eval: &EvalConfig,
    seed: u64,
    rstar: &RStar,
    reference: Option<&[Vec<f64>]>,
) -> Result<EvalReport> {
    let mut bidder = PolicyBidder {
        policy,
        mode: ActMode::Mean,
    };
    evaluate_bidder(&mut bidder, "pemorl", sim, eval, seed, rstar, reference)
}
