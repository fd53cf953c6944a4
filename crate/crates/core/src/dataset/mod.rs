//! Offline transition storage.
//!
//! A [`DataSet`] holds real transitions collected from the simulator or
//! imaginary transitions generated by an environment model. Sets are
//! immutable once built; [`split`] partitions by episode.

mod jsonl;
pub mod synthetic;
mod wasserstein;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::auction::{run_episode, BehaviorParams, BehaviorPolicy, SimConfig, LOCAL_STATE_DIM};
use crate::error::{Error, Result};
use crate::rng;

pub use jsonl::{read_jsonl, write_jsonl};
pub use wasserstein::{sliced_wasserstein, wasserstein_1d, DEFAULT_PROJECTIONS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    Real,
    Imaginary,
    ImaginaryPenalized,
}

/// One `(s, a, r, c, s')` tuple over the full global state.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub global_state: Vec<f64>,
    pub joint_action: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    pub next_global_state: Vec<f64>,
    pub kind: TransitionKind,
    pub episode_id: u64,
    pub t: usize,
}

impl Transition {
    /// The representative's local state (last block of the global state).
    pub fn observation(&self) -> &[f64] {
        &self.global_state[self.global_state.len() - LOCAL_STATE_DIM..]
    }

    pub fn next_observation(&self) -> &[f64] {
        &self.next_global_state[self.next_global_state.len() - LOCAL_STATE_DIM..]
    }

    pub fn rep_action(&self) -> f64 {
        *self.joint_action.last().expect("non-empty joint action")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataMeta {
    pub n: usize,
    pub ds: usize,
    pub horizon: usize,
    pub seed: u64,
    pub generator: String,
    #[serde(default)]
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSet {
    pub meta: DataMeta,
    pub transitions: Vec<Transition>,
}

impl DataSet {
    pub fn new(meta: DataMeta, transitions: Vec<Transition>) -> Result<Self> {
        let ds = DataSet { meta, transitions };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.meta.n * self.meta.ds
    }

    pub fn validate(&self) -> Result<()> {
        let sd = self.state_dim();
        for (k, tr) in self.transitions.iter().enumerate() {
            if tr.global_state.len() != sd || tr.next_global_state.len() != sd {
                return Err(Error::Schema(format!(
                    "transition {k}: state dims {}/{} but meta says {sd}",
                    tr.global_state.len(),
                    tr.next_global_state.len()
                )));
            }
            if tr.joint_action.len() != self.meta.n {
                return Err(Error::Schema(format!(
                    "transition {k}: {} actions for {} advertisers",
                    tr.joint_action.len(),
                    self.meta.n
                )));
            }
            if !tr.reward.is_finite() || !tr.cost.is_finite() {
                return Err(Error::Schema(format!("transition {k}: non-finite reward or cost")));
            }
        }
        Ok(())
    }

    /// Distinct episode ids in ascending order.
    pub fn episode_ids(&self) -> Vec<u64> {
        self.transitions
            .iter()
            .map(|t| t.episode_id)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Representative observations of every transition (used for trajectory
    /// distances).
    pub fn observations(&self) -> Vec<Vec<f64>> {
        self.transitions.iter().map(|t| t.observation().to_vec()).collect()
    }
}

/// Seed of episode `e` in a collection run seeded with `seed`.
pub fn episode_seed(seed: u64, e: u64) -> u64 {
    rng::derive_seed(seed, "episode", e)
}

/// Runs `episodes` ground-truth episodes. Episode `e` uses representative
/// behavior `behaviors[e % len]` and simulator seed [`episode_seed`].
pub fn collect_real_data(
    cfg: &SimConfig,
    behaviors: &[BehaviorParams],
    episodes: usize,
    seed: u64,
) -> Result<DataSet> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("episodes must be >= 1".into()));
    }
    if behaviors.is_empty() {
        return Err(Error::InvalidArgument("behavior list is empty".into()));
    }
    cfg.validate()?;
    let mut transitions = Vec::with_capacity(episodes * cfg.horizon);
    for e in 0..episodes as u64 {
        let params = behaviors[e as usize % behaviors.len()];
        params.validate()?;
        let mut policy = BehaviorPolicy {
            params,
            max_multiplier: cfg.max_multiplier,
        };
        let ep = run_episode(&mut policy, cfg, episode_seed(seed, e), e)?;
        transitions.extend(ep.transitions);
    }
    let generator = format!(
        "simulator N={} T={} behaviors={}",
        cfg.n_advertisers,
        cfg.horizon,
        behaviors
            .iter()
            .map(|b| format!("({},{})", b.mean, b.noise))
            .collect::<Vec<_>>()
            .join(";")
    );
    DataSet::new(
        DataMeta {
            n: cfg.n_advertisers,
            ds: LOCAL_STATE_DIM,
            horizon: cfg.horizon,
            seed,
            generator,
            config_hash: String::new(),
        },
        transitions,
    )
}

/// Splits by episode id; no episode is divided.
pub fn split(ds: &DataSet, test_fraction: f64, seed: u64) -> Result<(DataSet, DataSet)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction {test_fraction} must lie strictly between 0 and 1"
        )));
    }
    let mut ids = ds.episode_ids();
    let n_test = (ids.len() as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test == ids.len() {
        return Err(Error::InvalidArgument(format!(
            "fraction {test_fraction} of {} episodes leaves one side empty",
            ids.len()
        )));
    }
    ids.shuffle(&mut rng::stream(seed, "split", 0));
    let test_ids: BTreeSet<u64> = ids[..n_test].iter().copied().collect();
    let (test, train): (Vec<_>, Vec<_>) = ds
        .transitions
        .iter()
        .cloned()
        .partition(|t| test_ids.contains(&t.episode_id));
    Ok((
        DataSet {
            meta: ds.meta.clone(),
            transitions: train,
        },
        DataSet {
            meta: ds.meta.clone(),
            transitions: test,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SimConfig {
        SimConfig::default()
    }

    fn behaviors() -> Vec<BehaviorParams> {
        vec![
            BehaviorParams { mean: 0.8, noise: 0.05 },
            BehaviorParams { mean: 1.0, noise: 0.05 },
            BehaviorParams { mean: 1.2, noise: 0.05 },
        ]
    }

    #[test]
    fn one_episode_has_horizon_transitions() {
        let ds = collect_real_data(&cfg(), &behaviors(), 1, 3).unwrap();
        assert_eq!(ds.len(), 16);
    }

    #[test]
    fn recorded_multipliers_stay_near_behavior_support() {
        let ds = collect_real_data(&cfg(), &behaviors(), 30, 4).unwrap();
        for tr in &ds.transitions {
            let a = tr.rep_action();
            // Offline steps record a zero bid.
            assert!(a == 0.0 || (0.8 - 0.15..=1.2 + 0.15).contains(&a), "{a}");
        }
    }

    #[test]
    fn split_by_episode() {
        let ds = collect_real_data(&cfg(), &behaviors(), 10, 5).unwrap();
        let (train, test) = split(&ds, 0.2, 9).unwrap();
        assert_eq!(train.episode_ids().len(), 8);
        assert_eq!(test.episode_ids().len(), 2);
        let tr_ids: BTreeSet<_> = train.episode_ids().into_iter().collect();
        assert!(test.episode_ids().iter().all(|e| !tr_ids.contains(e)));
        assert_eq!(train.len() + test.len(), ds.len());
        let mut all: Vec<_> = train.transitions.iter().chain(&test.transitions).map(|t| (t.episode_id, t.t)).collect();
        all.sort();
        let mut orig: Vec<_> = ds.transitions.iter().map(|t| (t.episode_id, t.t)).collect();
        orig.sort();
        assert_eq!(all, orig);
        let again = split(&ds, 0.2, 9).unwrap();
        assert_eq!(again.1.episode_ids(), test.episode_ids());
    }

    #[test]
    fn split_rejects_empty_side() {
        let ds = collect_real_data(&cfg(), &behaviors(), 1, 6).unwrap();
        assert!(split(&ds, 0.5, 1).is_err());
        assert!(split(&ds, 0.0, 1).is_err());
        assert!(split(&ds, 1.0, 1).is_err());
    }
}
