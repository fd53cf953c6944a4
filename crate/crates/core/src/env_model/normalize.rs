use serde::{Deserialize, Serialize};

use crate::dataset::DataSet;
use crate::error::{Error, Result};

const STD_FLOOR: f64 = 1e-3;

/// Affine feature scaling fitted on training data. Statistics are pooled
/// over advertisers per feature, so scaling commutes with permutations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub action_mean: f64,
    pub action_std: f64,
    pub delta_mean: Vec<f64>,
    pub delta_std: Vec<f64>,
    pub reward_mean: f64,
    pub reward_std: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (mut n, mut sum) = (0usize, 0.0);
    for v in values.clone() {
        n += 1;
        sum += v;
    }
    let mean = sum / n.max(1) as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n.max(1) as f64;
    (mean, var.sqrt().max(STD_FLOOR))
}

impl Normalizer {
    pub fn fit(ds: &DataSet) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::InvalidArgument("cannot fit normalizer on an empty dataset".into()));
        }
        let d = ds.meta.ds;
        let mut state_mean = vec![0.0; d];
        let mut state_std = vec![0.0; d];
        let mut delta_mean = vec![0.0; d];
        let mut delta_std = vec![0.0; d];
        for f in 0..d {
            let states = ds.transitions.iter().flat_map(move |t| t.global_state.iter().skip(f).step_by(d).copied());
            (state_mean[f], state_std[f]) = mean_std(states);
            let deltas = ds.transitions.iter().flat_map(move |t| {
                t.next_global_state
                    .iter()
                    .zip(&t.global_state)
                    .skip(f)
                    .step_by(d)
                    .map(|(a, b)| a - b)
            });
            (delta_mean[f], delta_std[f]) = mean_std(deltas);
        }
        let (action_mean, action_std) = mean_std(ds.transitions.iter().flat_map(|t| t.joint_action.iter().copied()));
        let (reward_mean, reward_std) = mean_std(ds.transitions.iter().map(|t| t.reward));
        Ok(Normalizer {
            state_mean,
            state_std,
            action_mean,
            action_std,
            delta_mean,
            delta_std,
            reward_mean,
            reward_std,
        })
    }

    pub fn ds(&self) -> usize {
        self.state_mean.len()
    }

    /// Identity scaling for `ds` state features.
    pub fn identity(ds: usize) -> Self {
        Normalizer {
            state_mean: vec![0.0; ds],
            state_std: vec![1.0; ds],
            action_mean: 0.0,
            action_std: 1.0,
            delta_mean: vec![0.0; ds],
            delta_std: vec![1.0; ds],
            reward_mean: 0.0,
            reward_std: 1.0,
        }
    }
}
