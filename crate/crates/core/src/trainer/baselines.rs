use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::auction::{step, AdvertiserContext, GlobalState, SimConfig};
use crate::dataset::DataSet;
use crate::diffcore::Tensor;
use crate::env_model::{train_model, BatchPrediction, EnvModel, LearnedModel, ModelKind, ModelSpec};
use crate::error::{Error, Result};
use crate::rng;

use super::config::{BaselineConfig, TrainConfig};

/// Analytic second-price simulator used as a model, with its own (possibly
/// wrong) parameters. Per-episode quantities it cannot observe are filled
/// in: budgets are nominal, the context norm is inverted from the value
/// forecast and its direction is drawn at random. Predictions average
/// `samples` simulated steps; the variance is a fixed constant.
#[derive(Clone, Debug)]
pub struct GspProxy {
    pub assumed: SimConfig,
    pub samples: usize,
    pub variance: f64,
    pub seed: u64,
}

impl GspProxy {
    /// Proxy for `truth` with the value scale and impression rate distorted
    /// by the configured factors.
    pub fn misspecified(truth: &SimConfig, cfg: &BaselineConfig, seed: u64) -> Self {
        let mut assumed = truth.clone();
        assumed.value_scale *= cfg.value_scale_factor;
        assumed.impressions_mean *= cfg.impressions_factor;
        assumed.budget_jitter = 0.0;
        GspProxy {
            assumed,
            samples: cfg.samples,
            variance: cfg.variance,
            seed,
        }
    }

    fn contexts(&self, gs: &GlobalState, r: &mut rng::Rng) -> Vec<AdvertiserContext> {
        let cfg = &self.assumed;
        let n = gs.n();
        let dim = cfg.context_dim;
        let c = cfg.affinity_strength;
        // value_forecast = scale * exp(mu_t + s^2/2 + c^2 |x|^2 / (2 dim)), with
        // mu_t the forecast at |x| = 0.
        let base = cfg.value_forecast(&vec![0.0; dim], gs.t);
        (0..n)
            .map(|i| {
                let vf = gs.locals[i].value_forecast;
                let norm2 = if c > 0.0 && vf > 0.0 && base > 0.0 {
                    ((vf / base).ln() * 2.0 * dim as f64 / (c * c)).max(0.0)
                } else {
                    0.0
                };
                let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(r)).collect();
                let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                let budget = if i == n - 1 { cfg.rep_budget } else { cfg.background_budget };
                AdvertiserContext {
                    id: i as u64,
                    x: dir.iter().map(|v| v / len * norm2.sqrt()).collect(),
                    budget,
                }
            })
            .collect()
    }
}

impl EnvModel for GspProxy {
    fn label(&self) -> String {
        "gsp_proxy".into()
    }

    fn predict_batch(&self, states: &Tensor, actions: &Tensor) -> Result<BatchPrediction> {
        let (batch, n) = actions.shape();
        if n != self.assumed.n_advertisers || states.shape() != (batch, n * crate::auction::LOCAL_STATE_DIM) {
            return Err(Error::shape(
                "gsp_proxy",
                format!("states {:?}, actions {:?}, simulator has {} advertisers", states.shape(), actions.shape(), self.assumed.n_advertisers),
            ));
        }
        let horizon = self.assumed.horizon;
        let width = states.cols() + 1;
        let mut mean = Tensor::zeros(batch, width);
        for b in 0..batch {
            let row = states.row(b);
            let t = ((1.0 - row[0]) * horizon as f64).round().clamp(0.0, (horizon - 1) as f64) as usize;
            let gs = GlobalState::from_flat(row, t);
            let bids = actions.row(b);
            let mut r = rng::stream(self.seed, "gsp-proxy", b as u64);
            let out = mean.row_mut(b);
            for _ in 0..self.samples {
                let contexts = self.contexts(&gs, &mut r);
                let (outcome, next) = step(&self.assumed, &gs, &contexts, bids, &mut r)?;
                for (o, v) in out.iter_mut().zip(next.flatten()) {
                    *o += v / self.samples as f64;
                }
                out[width - 1] += outcome.rewards[n - 1] / self.samples as f64;
            }
        }
        Ok(BatchPrediction {
            mean,
            variance: Tensor::filled(batch, width, self.variance),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    FcNonPe,
    GspProxy,
}

/// A baseline environment model.
pub enum BaselineModel {
    Fc(LearnedModel),
    Gsp(GspProxy),
}

impl EnvModel for BaselineModel {
    fn label(&self) -> String {
        match self {
            BaselineModel::Fc(m) => m.label(),
            BaselineModel::Gsp(m) => m.label(),
        }
    }

    fn predict_batch(&self, states: &Tensor, actions: &Tensor) -> Result<BatchPrediction> {
        match self {
            BaselineModel::Fc(m) => m.predict_batch(states, actions),
            BaselineModel::Gsp(m) => m.predict_batch(states, actions),
        }
    }
}

/// Trains (fully connected) or builds (analytic proxy) a baseline model.
/// The fully connected model's width is chosen to match the PE model's
/// parameter count.
pub fn train_baseline_model(kind: BaselineKind, train: &DataSet, cfg: &TrainConfig, seed: u64) -> Result<BaselineModel> {
    match kind {
        BaselineKind::FcNonPe => {
            let spec = ModelSpec::new(ModelKind::FcNonPe, train.meta.ds, train.meta.n, &cfg.model)?;
            Ok(BaselineModel::Fc(train_model(train, &spec, seed)?.0))
        }
        BaselineKind::GspProxy => Ok(BaselineModel::Gsp(GspProxy::misspecified(&cfg.sim, &cfg.baseline, seed))),
    }
}
