use serde::{Deserialize, Serialize};

use crate::dataset::{collect_real_data, DataSet};

use super::train::collect_training_data;
use crate::diffcore::Tensor;
use crate::env_model::{train_model, EnvModel, ModelKind, ModelSpec};
use crate::rng;

use super::baselines::{train_baseline_model, BaselineKind};
use super::config::TrainConfig;
use crate::error::{Error, Result};

/// Mean absolute and squared error of predicted means over the concatenated
/// `(next state, reward)` vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelScores {
    pub mae: f64,
    pub mse: f64,
}

pub fn score_model(model: &dyn EnvModel, data: &DataSet) -> Result<ModelScores> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot score a model on an empty dataset".into()));
    }
    let (mut abs, mut sq, mut count) = (0.0, 0.0, 0usize);
    for chunk in data.transitions.chunks(512) {
        let s = Tensor::from_rows(&chunk.iter().map(|t| t.global_state.clone()).collect::<Vec<_>>())?;
        let a = Tensor::from_rows(&chunk.iter().map(|t| t.joint_action.clone()).collect::<Vec<_>>())?;
        let p = model.predict_batch(&s, &a)?;
        for (r, tr) in chunk.iter().enumerate() {
            let target = tr.next_global_state.iter().chain(std::iter::once(&tr.reward));
            for (m, y) in p.mean.row(r).iter().zip(target) {
                let e = m - y;
                abs += e.abs();
                sq += e * e;
                count += 1;
            }
        }
    }
    Ok(ModelScores {
        mae: abs / count as f64,
        mse: sq / count as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub model: String,
    pub train_mae: f64,
    pub train_mse: f64,
    pub test_mae: f64,
    pub test_mse: f64,
    /// Empirical generalization gap, test MAE minus train MAE.
    pub gap: f64,
}

pub fn compare_models(models: &[&dyn EnvModel], train: &DataSet, test: &DataSet) -> Result<Vec<CompareRow>> {
    models
        .iter()
        .map(|m| {
            let tr = score_model(*m, train)?;
            let te = score_model(*m, test)?;
            Ok(CompareRow {
                model: m.label(),
                train_mae: tr.mae,
                train_mse: tr.mse,
                test_mae: te.mae,
                test_mse: te.mse,
                gap: te.mae - tr.mae,
            })
        })
        .collect()
}

/// Training data from `cfg.data.behaviors` and held-out data from the broader
/// `cfg.data.test_behaviors`, both drawn for `seed`.
pub fn comparison_data(cfg: &TrainConfig, seed: u64) -> Result<(DataSet, DataSet)> {
    cfg.validate()?;
    if cfg.data.test_behaviors.is_empty() || cfg.data.test_episodes == 0 {
        return Err(Error::Config("model comparison needs test_behaviors and test_episodes".into()));
    }
    let train = collect_training_data(cfg, seed)?;
    let test = collect_real_data(
        &cfg.sim,
        &cfg.data.test_behaviors,
        cfg.data.test_episodes,
        rng::derive_seed(seed, "test-data", 0),
    )?;
    Ok((train, test))
}

/// Trains a PE model and the fully connected baseline on the same training
/// data, builds the analytic proxy, and scores all three.
pub fn model_comparison(cfg: &TrainConfig, seed: u64) -> Result<Vec<CompareRow>> {
    let (train, test) = comparison_data(cfg, seed)?;
    let spec = ModelSpec::new(ModelKind::Pe, train.meta.ds, train.meta.n, &cfg.model)?;
    let (pe, _) = train_model(&train, &spec, rng::derive_seed(seed, "pe-model", 0))?;
    let fc = train_baseline_model(BaselineKind::FcNonPe, &train, cfg, rng::derive_seed(seed, "fc-model", 0))?;
    let gsp = train_baseline_model(BaselineKind::GspProxy, &train, cfg, rng::derive_seed(seed, "gsp-proxy", 0))?;
    compare_models(&[&pe, &fc, &gsp], &train, &test)
}
