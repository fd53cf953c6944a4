use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DataSet;
use crate::diffcore::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

use super::model::{check_data, fit_model, validation_split, LearnedModel, ModelSpec, TrainingLog};
use super::normalize::Normalizer;
use super::{BatchPrediction, EnvModel};

/// K independently initialized models trained on the same data.
#[derive(Clone, Debug)]
pub struct EnsembleModel {
    members: Vec<LearnedModel>,
    seeds: Vec<u64>,
    val_losses: Vec<f64>,
}

/// One draw from the ensemble: a uniformly chosen member's Gaussian sample.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSample {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub member: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MemberEntry {
    file: String,
    seed: u64,
    val_loss: f64,
    normalizer: Normalizer,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    spec: ModelSpec,
    members: Vec<MemberEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Population standard deviation of the members' reward means at `row`.
pub fn reward_std(preds: &[BatchPrediction], row: usize) -> f64 {
    let k = preds.len() as f64;
    let width = preds[0].mean.cols();
    let mean = preds.iter().map(|p| p.mean.get(row, width - 1)).sum::<f64>() / k;
    let var = preds
        .iter()
        .map(|p| {
            let d = p.mean.get(row, width - 1) - mean;
            d * d
        })
        .sum::<f64>()
        / k;
    var.sqrt()
}

/// Chooses a member uniformly and samples every output independently as
/// `mean + sqrt(var) * z`.
pub fn sample_members(preds: &[BatchPrediction], row: usize, rng: &mut Rng) -> EnsembleSample {
    let member = rng.random_range(0..preds.len());
    let p = &preds[member];
    let width = p.mean.cols();
    let draw: Vec<f64> = (0..width)
        .map(|c| {
            let z: f64 = StandardNormal.sample(rng);
            p.mean.get(row, c) + p.variance.get(row, c).sqrt() * z
        })
        .collect();
    EnsembleSample {
        next_state: draw[..width - 1].to_vec(),
        reward: draw[width - 1],
        member,
    }
}

fn single(gs: &[f64], a: &[f64]) -> Result<(Tensor, Tensor)> {
    Ok((Tensor::row_vector(gs), Tensor::row_vector(a)))
}

impl EnsembleModel {
    pub fn new(members: Vec<LearnedModel>, seeds: Vec<u64>, val_losses: Vec<f64>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidArgument("an ensemble needs at least one member".into()));
        }
        if seeds.len() != members.len() || val_losses.len() != members.len() {
            return Err(Error::InvalidArgument("one seed and validation loss per member".into()));
        }
        Ok(EnsembleModel {
            members,
            seeds,
            val_losses,
        })
    }

    /// Trains `spec.config.ensemble_size` members. Members share the
    /// training/validation split and the normalizer and differ only in the
    /// seed driving initialization and minibatch order.
    pub fn train(train: &DataSet, spec: &ModelSpec, seed: u64) -> Result<(Self, Vec<TrainingLog>)> {
        check_data(train, spec)?;
        let k = spec.config.ensemble_size;
        let (fit, val) = validation_split(train, spec.config.validation_fraction, seed);
        let norm = Normalizer::fit(&fit)?;
        let seeds: Vec<u64> = (0..k as u64).map(|m| rng::derive_seed(seed, "member", m)).collect();
        let trained: Vec<(LearnedModel, TrainingLog)> = seeds
            .par_iter()
            .map(|&s| fit_model(&fit, &val, norm.clone(), spec, s))
            .collect::<Result<_>>()?;
        let val_losses = trained.iter().map(|(_, log)| log.best_val_loss).collect();
        let (members, logs): (Vec<_>, Vec<_>) = trained.into_iter().unzip();
        Ok((EnsembleModel::new(members, seeds, val_losses)?, logs))
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[LearnedModel] {
        &self.members
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn val_losses(&self) -> &[f64] {
        &self.val_losses
    }

    pub fn spec(&self) -> &ModelSpec {
        self.members[0].spec()
    }

    pub fn member_predictions(&self, states: &Tensor, actions: &Tensor) -> Result<Vec<BatchPrediction>> {
        self.members.iter().map(|m| m.predict_batch(states, actions)).collect()
    }

    /// Standard deviation across members of the predicted reward mean.
    pub fn reward_uncertainty(&self, gs: &[f64], joint_action: &[f64]) -> Result<f64> {
        let (s, a) = single(gs, joint_action)?;
        Ok(reward_std(&self.member_predictions(&s, &a)?, 0))
    }

    pub fn ensemble_sample(&self, gs: &[f64], joint_action: &[f64], rng: &mut Rng) -> Result<EnsembleSample> {
        let (s, a) = single(gs, joint_action)?;
        Ok(sample_members(&self.member_predictions(&s, &a)?, 0, rng))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.k());
        for (k, m) in self.members.iter().enumerate() {
            let file = format!("member_{k}.bin");
            m.params().save(&dir.join(&file))?;
            entries.push(MemberEntry {
                file,
                seed: self.seeds[k],
                val_loss: self.val_losses[k],
                normalizer: m.normalizer().clone(),
            });
        }
        let manifest = Manifest {
            spec: self.spec().clone(),
            members: entries,
        };
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.clone(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        let mut members = Vec::new();
        let mut seeds = Vec::new();
        let mut val_losses = Vec::new();
        for entry in manifest.members {
            let params = ParamSet::load(&dir.join(&entry.file))?;
            members.push(LearnedModel::from_parts(manifest.spec.clone(), entry.normalizer, params)?);
            seeds.push(entry.seed);
            val_losses.push(entry.val_loss);
        }
        EnsembleModel::new(members, seeds, val_losses)
    }
}

impl EnvModel for EnsembleModel {
    fn label(&self) -> String {
        format!("{}_ensemble", self.members[0].label())
    }

    /// Moments of the equal-weight mixture of member Gaussians.
    fn predict_batch(&self, states: &Tensor, actions: &Tensor) -> Result<BatchPrediction> {
        let preds = self.member_predictions(states, actions)?;
        let k = preds.len() as f64;
        let (rows, cols) = preds[0].mean.shape();
        let mut mean = Tensor::zeros(rows, cols);
        let mut second = Tensor::zeros(rows, cols);
        for p in &preds {
            mean.add_assign(&p.mean);
            second.add_assign(&p.variance.zip_map(&p.mean, |v, m| v + m * m));
        }
        let mean = mean.map(|x| x / k);
        let variance = second.zip_map(&mean, |s, m| (s / k - m * m).max(0.0));
        Ok(BatchPrediction { mean, variance })
    }
}
