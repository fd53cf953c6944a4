//! Learned environment models.
//!
//! The permutation-equivariant model predicts every advertiser's next local
//! state with weight-shared blocks (each block sees its own record and a
//! pooled attention summary of all other advertisers) and the
//! representative's reward with a set-level head. All outputs are diagonal
//! Gaussians. A fully connected model over the concatenated records serves
//! as the non-equivariant baseline.
//!
//! Each advertiser record is `[state ‖ action ‖ is_rep]`; the flag moves with
//! the advertiser under permutation, which is what lets a
//! permutation-invariant head report one particular advertiser's reward.

mod ensemble;
mod fc;
mod fullcov;
mod model;
mod net;
mod normalize;
mod pe;
mod setfn;
#[cfg(test)]
mod tests;

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub use ensemble::{reward_std, sample_members, EnsembleModel, EnsembleSample, MANIFEST_FILE};
pub use fullcov::{full_covariance_nll, FullCovariance};
pub use model::{train_model, EpochStats, LearnedModel, ModelSpec, TrainingLog};
pub use normalize::Normalizer;
pub use setfn::ModelSetFunction;

/// Mean and per-dimension variance of all next local states followed by
/// the reward (`n * ds + 1` entries).
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl GaussianPrediction {
    pub fn reward_mean(&self) -> f64 {
        *self.mean.last().expect("non-empty prediction")
    }

    pub fn state_mean(&self) -> &[f64] {
        &self.mean[..self.mean.len() - 1]
    }
}

/// Row-wise predictions for a batch; `mean` and `variance` are
/// `batch x (n * ds + 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchPrediction {
    pub mean: Tensor,
    pub variance: Tensor,
}

impl BatchPrediction {
    pub fn row(&self, r: usize) -> GaussianPrediction {
        GaussianPrediction {
            mean: self.mean.row(r).to_vec(),
            variance: self.variance.row(r).to_vec(),
        }
    }
}

/// Anything that maps `(global state, joint action)` to a Gaussian over the
/// next global state and the representative's reward.
pub trait EnvModel: Sync {
    fn label(&self) -> String;

    /// `states` is `batch x (n * ds)`, `actions` is `batch x n`.
    fn predict_batch(&self, states: &Tensor, actions: &Tensor) -> Result<BatchPrediction>;

    fn predict(&self, gs: &[f64], joint_action: &[f64]) -> Result<GaussianPrediction> {
        let p = self.predict_batch(&Tensor::row_vector(gs), &Tensor::row_vector(joint_action))?;
        Ok(p.row(0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Pe,
    FcNonPe,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    Diagonal,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub hidden: usize,
    /// Variance floor in normalized units.
    pub min_variance: f64,
    /// `full` only affects [`FullCovariance`] inspection; training and
    /// sampling always use the diagonal.
    pub covariance: CovarianceMode,
    pub ensemble_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub validation_fraction: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 32,
            heads: 4,
            hidden: 64,
            min_variance: 1e-4,
            covariance: CovarianceMode::Diagonal,
            ensemble_size: 4,
            epochs: 50,
            batch_size: 256,
            lr: 1e-3,
            validation_fraction: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.embed_dim == 0 || self.hidden == 0 {
            return fail("embed_dim and hidden must be >= 1".into());
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return fail(format!("embed_dim {} not divisible by heads {}", self.embed_dim, self.heads));
        }
        if !(self.min_variance > 0.0 && self.min_variance.is_finite()) {
            return fail(format!("min_variance = {} must be > 0", self.min_variance));
        }
        if self.ensemble_size == 0 {
            return fail("ensemble_size must be >= 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr = {} must be > 0", self.lr));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return fail(format!("validation_fraction = {} must lie in [0, 1)", self.validation_fraction));
        }
        Ok(())
    }
}

/// `Σ (t - μ)² / v + Σ log v + sqrt(Σ v²)` for a diagonal Gaussian.
pub fn nll_loss(pred: &GaussianPrediction, target: &[f64]) -> Result<f64> {
    if pred.mean.len() != target.len() || pred.variance.len() != target.len() {
        return Err(Error::shape(
            "nll_loss",
            format!("mean {}, variance {}, target {}", pred.mean.len(), pred.variance.len(), target.len()),
        ));
    }
    if let Some(v) = pred.variance.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::InvalidArgument(format!("variance {v} is not positive")));
    }
    let mut quad = 0.0;
    let mut logdet = 0.0;
    let mut frob = 0.0;
    for ((t, m), v) in target.iter().zip(&pred.mean).zip(&pred.variance) {
        quad += (t - m) * (t - m) / v;
        logdet += v.ln();
        frob += v * v;
    }
    Ok(quad + logdet + frob.sqrt())
}
