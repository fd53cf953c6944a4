use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{Activation, Binding, Mlp, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Per-feature affine scaling of observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ObsScaler {
    pub fn identity(dim: usize) -> Self {
        ObsScaler {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fits per-feature mean and std (floored at 1e-3).
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::InvalidArgument("cannot fit a scaler to no observations".into()));
        };
        let dim = first.len();
        let count = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / count;
            }
        }
        let mut std = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in std.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / count;
            }
        }
        for s in &mut std {
            *s = s.sqrt().max(1e-3);
        }
        Ok(ObsScaler { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, obs: &Tensor) -> Result<Tensor> {
        if obs.cols() != self.dim() {
            return Err(Error::shape(
                "observation",
                format!("{} columns, scaler expects {}", obs.cols(), self.dim()),
            ));
        }
        let mut out = obs.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
        Ok(out)
    }
}

/// `w_max (1 + tanh u) / 2`.
pub fn squash(u: f64, w_max: f64) -> f64 {
    0.5 * w_max * (1.0 + u.tanh())
}

/// Inverse of [`squash`] for actions strictly inside `(0, w_max)`.
pub fn unsquash(a: f64, w_max: f64) -> f64 {
    (2.0 * a / w_max - 1.0).atanh()
}

/// State-action value network `Q(o, a) = value_scale * mlp([scaled o ‖ 2a / w_max - 1])`.
const Q_OUT: &str = "q.2";

#[derive(Clone, Debug)]
pub struct QNetwork {
    mlp: Mlp,
    pub params: ParamSet,
    pub scaler: ObsScaler,
    pub w_max: f64,
    /// Output multiplier, so the network itself works on unit-scale values.
    pub value_scale: f64,
}

impl QNetwork {
    pub fn new(scaler: ObsScaler, hidden: usize, w_max: f64, value_scale: f64, seed: u64) -> Result<Self> {
        if !(w_max > 0.0 && value_scale > 0.0 && value_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "w_max {w_max} and value_scale {value_scale} must be positive"
            )));
        }
        let mlp = Mlp::new("q", &[scaler.dim() + 1, hidden, hidden, 1], Activation::Relu, Activation::Linear);
        let mut params = ParamSet::new();
        mlp.init(&mut params, &mut rng::stream(seed, "q-init", 0))?;
        // Start nearly flat so the actor does not chase an arbitrary slope
        // before the critic has fit anything.
        let w = params.get_mut(&format!("{Q_OUT}.w")).expect("output layer");
        *w = w.map(|v| v * 0.01);
        Ok(QNetwork {
            mlp,
            params,
            scaler,
            w_max,
            value_scale,
        })
    }

    /// A copy sharing architecture and values, without optimizer state.
    pub fn snapshot(&self) -> Self {
        QNetwork {
            params: self.params.values_only(),
            ..self.clone()
        }
    }

    /// `scaled_obs` is already scaled; `actions` is a `batch x 1` variable in
    /// raw multiplier units.
    pub fn forward(&self, tape: &mut Tape, b: &Binding<'_>, scaled_obs: Var, actions: Var) -> Result<Var> {
        let a = tape.scale(actions, 2.0 / self.w_max);
        let a = tape.add_scalar(a, -1.0);
        let x = tape.concat_cols(&[scaled_obs, a])?;
        let y = self.mlp.forward(tape, b, x)?;
        Ok(tape.scale(y, self.value_scale))
    }

    /// `Q(obs_r, actions_r)` for every row.
    pub fn values(&self, obs: &Tensor, actions: &[f64]) -> Result<Vec<f64>> {
        if obs.rows() != actions.len() {
            return Err(Error::shape("q values", format!("{} observations, {} actions", obs.rows(), actions.len())));
        }
        let mut tape = Tape::new();
        let o = tape.constant(self.scaler.apply(obs)?);
        let a = tape.constant(Tensor::new(actions.len(), 1, actions.to_vec())?);
        let q = self.forward(&mut tape, &self.params.frozen(), o, a)?;
        Ok(tape.value(q).data().to_vec())
    }

    /// `max_{a' in grid} Q(obs_r, a')` for every row.
    pub fn max_over_grid(&self, obs: &Tensor, grid: &[f64]) -> Result<Vec<f64>> {
        let g = grid.len();
        let mut tiled = Tensor::zeros(obs.rows() * g, obs.cols());
        let mut acts = Vec::with_capacity(obs.rows() * g);
        for r in 0..obs.rows() {
            for (k, &a) in grid.iter().enumerate() {
                tiled.row_mut(r * g + k).copy_from_slice(obs.row(r));
                acts.push(a);
            }
        }
        let q = self.values(&tiled, &acts)?;
        Ok(q.chunks(g).map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActMode {
    Sample,
    Mean,
}

/// Squashed-Gaussian policy over the bid multiplier. The network emits
/// `(mean, log-std)` of a pre-squash Gaussian `u`; actions are
/// `w_max (1 + tanh u) / 2`.
#[derive(Clone, Debug)]
pub struct Policy {
    mlp: Mlp,
    pub params: ParamSet,
    pub scaler: ObsScaler,
    pub w_max: f64,
}

const POLICY_OUT: &str = "pi.2";

impl Policy {
    /// Output weights start small so the initial policy bids close to
    /// `init_action` with pre-squash std `exp(init_log_std)`.
    pub fn new(scaler: ObsScaler, hidden: usize, w_max: f64, init_action: f64, init_log_std: f64, seed: u64) -> Result<Self> {
        if !(w_max > 0.0) || !(init_action > 0.0 && init_action < w_max) {
            return Err(Error::InvalidArgument(format!(
                "initial action {init_action} must lie strictly inside (0, {w_max})"
            )));
        }
        let mlp = Mlp::new("pi", &[scaler.dim(), hidden, hidden, 2], Activation::Relu, Activation::Linear);
        let mut params = ParamSet::new();
        mlp.init(&mut params, &mut rng::stream(seed, "policy-init", 0))?;
        let w = params.get_mut(&format!("{POLICY_OUT}.w")).expect("output layer");
        *w = w.map(|v| v * 0.01);
        let b = params.get_mut(&format!("{POLICY_OUT}.b")).expect("output layer");
        b.set(0, 0, unsquash(init_action, w_max));
        b.set(0, 1, init_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX));
        Ok(Policy {
            mlp,
            params,
            scaler,
            w_max,
        })
    }

    /// Pre-squash `(mean, clamped log-std)` variables, each `batch x 1`.
    pub fn dist(&self, tape: &mut Tape, b: &Binding<'_>, scaled_obs: Var) -> Result<(Var, Var)> {
        let out = self.mlp.forward(tape, b, scaled_obs)?;
        let mu = tape.slice_cols(out, 0, 1)?;
        let ls = tape.slice_cols(out, 1, 2)?;
        Ok((mu, tape.clamp(ls, LOG_STD_MIN, LOG_STD_MAX)))
    }

    /// Reparameterized actions `squash(mu + exp(log_std) * eps)`.
    pub fn rsample(&self, tape: &mut Tape, b: &Binding<'_>, scaled_obs: Var, eps: &[f64]) -> Result<Var> {
        let (mu, ls) = self.dist(tape, b, scaled_obs)?;
        let sd = tape.exp(ls);
        let e = tape.constant(Tensor::new(eps.len(), 1, eps.to_vec())?);
        let noise = tape.mul(sd, e)?;
        let u = tape.add(mu, noise)?;
        let t = tape.tanh(u);
        let t = tape.add_scalar(t, 1.0);
        Ok(tape.scale(t, 0.5 * self.w_max))
    }

    /// Pre-squash mean and clamped log-std per row of `obs`.
    pub fn raw_dist(&self, obs: &Tensor) -> Result<Vec<(f64, f64)>> {
        let mut tape = Tape::new();
        let o = tape.constant(self.scaler.apply(obs)?);
        let (mu, ls) = self.dist(&mut tape, &self.params.frozen(), o)?;
        let (mu, ls) = (tape.value(mu), tape.value(ls));
        Ok((0..obs.rows()).map(|r| (mu.get(r, 0), ls.get(r, 0))).collect())
    }

    pub fn act_batch(&self, obs: &Tensor, mode: ActMode, rng: &mut Rng) -> Result<Vec<f64>> {
        Ok(self
            .raw_dist(obs)?
            .into_iter()
            .map(|(mu, ls)| match mode {
                ActMode::Mean => squash(mu, self.w_max),
                ActMode::Sample => {
                    let z: f64 = StandardNormal.sample(rng);
                    squash(mu + ls.exp() * z, self.w_max)
                }
            })
            .collect())
    }

    pub fn act(&self, obs: &[f64], mode: ActMode, rng: &mut Rng) -> Result<f64> {
        Ok(self.act_batch(&Tensor::row_vector(obs), mode, rng)?[0])
    }

    /// Saves parameters, scaler and `w_max` in the tensor checkpoint format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut ps = self.params.values_only();
        let meta = [
            ("meta.obs_mean", Tensor::row_vector(&self.scaler.mean)),
            ("meta.obs_std", Tensor::row_vector(&self.scaler.std)),
            ("meta.w_max", Tensor::scalar(self.w_max)),
        ];
        for (name, t) in meta {
            ps.insert(name, t).expect("reserved names are unused");
        }
        ps.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ps = ParamSet::from_bytes(bytes)?;
        let scaler = ObsScaler {
            mean: need(&ps, "meta.obs_mean")?.data().to_vec(),
            std: need(&ps, "meta.obs_std")?.data().to_vec(),
        };
        let w_max = need(&ps, "meta.w_max")?.item();
        let hidden = need(&ps, "pi.0.b")?.cols();
        let mut policy = Policy::new(scaler, hidden, w_max, 0.5 * w_max, 0.0, 0)?;
        let names: Vec<String> = policy.params.names().map(str::to_string).collect();
        let mut params = ParamSet::new();
        for name in names {
            let t = need(&ps, &name)?;
            if t.shape() != policy.params.get(&name).expect("own parameter").shape() {
                return Err(Error::Schema(format!("tensor {name} has shape {:?}", t.shape())));
            }
            params.insert(&name, t.clone())?;
        }
        if ps.len() != params.len() + 3 {
            return Err(Error::Schema("unexpected tensors in policy checkpoint".into()));
        }
        policy.params = params;
        Ok(policy)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn need<'a>(ps: &'a ParamSet, name: &str) -> Result<&'a Tensor> {
    ps.get(name)
        .ok_or_else(|| Error::Schema(format!("policy checkpoint lacks tensor {name}")))
}
