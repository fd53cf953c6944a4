use crate::auction::{behavior_policy, LocalState, SimConfig, LOCAL_STATE_DIM};
use crate::dataset::{DataSet, Transition, TransitionKind};
use crate::diffcore::Tensor;
use crate::env_model::{reward_std, sample_members, EnsembleModel};
use crate::error::{Error, Result};
use crate::offline_rl::{ActMode, NextObsMoments, Policy};
use crate::rng::Rng;
use rand::Rng as _;

/// A model transition together with what the critic target needs.
#[derive(Clone, Debug)]
pub struct ImaginaryStep {
    pub transition: Transition,
    /// Raw reward draw before the penalty.
    pub raw_reward: f64,
    pub sigma: f64,
    pub moments: NextObsMoments,
    pub terminal: bool,
}

/// Rollout output plus the mean per-start penalized return.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub steps: Vec<ImaginaryStep>,
    pub mean_return: f64,
}

/// Writes the parts of a predicted next state that are known exactly: the
/// remaining-time feature and the `[0, 1]` range of the remaining budget.
pub(crate) fn fix_known_features(state: &mut [f64], t_next: usize, horizon: usize) {
    let time_left = (horizon - t_next.min(horizon)) as f64 / horizon as f64;
    for local in state.chunks_mut(LOCAL_STATE_DIM) {
        local[0] = time_left;
        local[1] = local[1].clamp(0.0, 1.0);
    }
}

/// Branched rollouts in the ensemble: `n_starts` states drawn uniformly from
/// `data`, each rolled for up to `h` steps (stopping at the horizon). The
/// representative samples from `policy`; background advertisers replay their
/// known behavior policies; advertisers without budget bid zero. Stored
/// rewards are `r_hat - lambda * sigma_hat`.
#[allow(clippy::too_many_arguments)]
pub fn rollout_imaginary(
    ens: &EnsembleModel,
    policy: &Policy,
    data: &DataSet,
    sim: &SimConfig,
    h: usize,
    lambda: f64,
    n_starts: usize,
    rng: &mut Rng,
) -> Result<Rollout> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot start rollouts from an empty dataset".into()));
    }
    let starts: Vec<(Vec<f64>, usize)> = (0..n_starts)
        .map(|_| {
            let tr = &data.transitions[rng.random_range(0..data.len())];
            (tr.global_state.clone(), tr.t)
        })
        .collect();
    rollout_from(ens, policy, starts, data.meta.n, data.meta.horizon, sim, h, lambda, rng)
}

#[allow(clippy::too_many_arguments)]
fn rollout_from(
    ens: &EnsembleModel,
    policy: &Policy,
    starts: Vec<(Vec<f64>, usize)>,
    n: usize,
    horizon: usize,
    sim: &SimConfig,
    h: usize,
    lambda: f64,
    rng: &mut Rng,
) -> Result<Rollout> {
    let n_starts = starts.len();
    let (mut states, mut times): (Vec<Vec<f64>>, Vec<usize>) = starts.into_iter().unzip();
    let mut returns = vec![0.0; n_starts];
    let mut alive: Vec<usize> = (0..n_starts).collect();
    let mut steps = Vec::with_capacity(n_starts * h);
    for _ in 0..h {
        alive.retain(|&i| times[i] < horizon);
        if alive.is_empty() {
            break;
        }
        let obs: Vec<Vec<f64>> = alive.iter().map(|&i| states[i][(n - 1) * LOCAL_STATE_DIM..].to_vec()).collect();
        let rep_actions = policy.act_batch(&Tensor::from_rows(&obs)?, ActMode::Sample, rng)?;
        let mut actions = Vec::with_capacity(alive.len());
        for (row, &i) in alive.iter().enumerate() {
            let mut a = vec![0.0; n];
            for (slot, b) in a.iter_mut().enumerate().take(n - 1) {
                let local = LocalState::from_slice(&states[i][slot * LOCAL_STATE_DIM..(slot + 1) * LOCAL_STATE_DIM]);
                *b = behavior_policy(&local, &sim.background_params(slot), sim.max_multiplier, rng);
            }
            a[n - 1] = rep_actions[row];
            // Offline advertisers record a zero bid, as in the simulator.
            for (slot, b) in a.iter_mut().enumerate() {
                if states[i][slot * LOCAL_STATE_DIM + 1] <= 0.0 {
                    *b = 0.0;
                }
            }
            actions.push(a);
        }
        let s_in: Vec<Vec<f64>> = alive.iter().map(|&i| states[i].clone()).collect();
        let preds = ens.member_predictions(&Tensor::from_rows(&s_in)?, &Tensor::from_rows(&actions)?)?;
        for (row, &i) in alive.iter().enumerate() {
            let draw = sample_members(&preds, row, rng);
            let sigma = reward_std(&preds, row);
            // Value won is never negative.
            let raw = draw.reward.max(0.0);
            let reward = raw - lambda * sigma;
            let mut next = draw.next_state;
            let t = times[i];
            fix_known_features(&mut next, t + 1, horizon);
            returns[i] += reward;
            steps.push(ImaginaryStep {
                transition: Transition {
                    global_state: s_in[row].clone(),
                    joint_action: actions[row].clone(),
                    reward,
                    cost: 0.0,
                    next_global_state: next.clone(),
                    kind: TransitionKind::ImaginaryPenalized,
                    episode_id: i as u64,
                    t,
                },
                raw_reward: raw,
                sigma,
                moments: {
                    let mut m = NextObsMoments::from_predictions(&preds, row);
                    m.pin_time_left(next[next.len() - LOCAL_STATE_DIM]);
                    m
                },
                terminal: t + 1 >= horizon,
            });
            states[i] = next;
            times[i] = t + 1;
        }
    }
    Ok(Rollout {
        steps,
        mean_return: returns.iter().sum::<f64>() / n_starts as f64,
    })
}

/// Mean penalized return of full-horizon model rollouts from the `t = 0`
/// states of `data` (the first `max_starts` of them).
pub fn model_return(
    ens: &EnsembleModel,
    policy: &Policy,
    data: &DataSet,
    sim: &SimConfig,
    lambda: f64,
    max_starts: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let starts: Vec<(Vec<f64>, usize)> = data
        .transitions
        .iter()
        .filter(|t| t.t == 0)
        .take(max_starts)
        .map(|t| (t.global_state.clone(), 0))
        .collect();
    if starts.is_empty() {
        return Err(Error::InvalidArgument("no episode starts in the dataset".into()));
    }
    let horizon = data.meta.horizon;
    Ok(rollout_from(ens, policy, starts, data.meta.n, horizon, sim, horizon, lambda, rng)?.mean_return)
}
