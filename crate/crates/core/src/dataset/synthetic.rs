//! Synthetic datasets with known, noiseless generators (model sanity checks).

use rand::Rng as _;

use crate::error::Result;
use crate::rng;

use super::{DataMeta, DataSet, Transition, TransitionKind};

/// Linear, permutation-equivariant dynamics over `n` advertisers with
/// `ds` features each:
///
/// ```text
/// s'_i = s_i + 0.1 (a_i - 1) w + 0.05 (mean_{j != i} s_j - s_i)
/// r    = 0.5 s_rep[0] + 0.3 a_rep - 0.1 mean_j a_j
/// ```
///
/// with `w_f = (f + 1) / ds`. States start uniform on `[0, 1]`, actions are
/// uniform on `[0, 2]`.
pub fn linear_dynamics(n: usize, ds: usize, episodes: usize, horizon: usize, seed: u64) -> Result<DataSet> {
    let mut r = rng::stream(seed, "synthetic-linear", 0);
    let w: Vec<f64> = (0..ds).map(|f| (f + 1) as f64 / ds as f64).collect();
    let mut transitions = Vec::with_capacity(episodes * horizon);
    for ep in 0..episodes {
        let mut s: Vec<f64> = (0..n * ds).map(|_| r.random::<f64>()).collect();
        for t in 0..horizon {
            let a: Vec<f64> = (0..n).map(|_| r.random_range(0.0..2.0)).collect();
            let mut next = s.clone();
            for i in 0..n {
                for f in 0..ds {
                    let others = (0..n).filter(|&j| j != i).map(|j| s[j * ds + f]).sum::<f64>() / (n - 1) as f64;
                    next[i * ds + f] = s[i * ds + f] + 0.1 * (a[i] - 1.0) * w[f] + 0.05 * (others - s[i * ds + f]);
                }
            }
            let rep = n - 1;
            let reward = 0.5 * s[rep * ds] + 0.3 * a[rep] - 0.1 * a.iter().sum::<f64>() / n as f64;
            transitions.push(Transition {
                global_state: s.clone(),
                joint_action: a,
                reward,
                cost: 0.0,
                next_global_state: next.clone(),
                kind: TransitionKind::Real,
                episode_id: ep as u64,
                t,
            });
            s = next;
        }
    }
    DataSet::new(
        DataMeta {
            n,
            ds,
            horizon,
            seed,
            generator: "synthetic linear dynamics".into(),
            config_hash: String::new(),
        },
        transitions,
    )
}
