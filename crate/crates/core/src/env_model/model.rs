use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{split, DataSet};
use crate::diffcore::{grad_check_graph, softplus, AdamConfig, GradCheckConfig, GradCheckReport, ParamSet, Tape, Tensor};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

use super::fc::FcNet;
use super::net::{build_records, nll_on_tape, AnyNet, Net};
use super::normalize::Normalizer;
use super::pe::PeNet;
use super::{BatchPrediction, EnvModel, ModelConfig, ModelKind};

/// Architecture description sufficient to rebuild a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub ds: usize,
    /// Advertiser count the model was trained with (the fully connected
    /// baseline only accepts this count).
    pub n: usize,
    /// Hidden width of the fully connected baseline; unused for PE.
    pub fc_width: usize,
    pub config: ModelConfig,
}

impl ModelSpec {
    /// For the fully connected baseline, picks the width that matches the PE
    /// model's parameter count for the same `ds`, `n` and config.
    pub fn new(kind: ModelKind, ds: usize, n: usize, config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let fc_width = match kind {
            ModelKind::Pe => 0,
            ModelKind::FcNonPe => {
                let target = PeNet::new(ds, config)?.num_params();
                FcNet::width_for(ds, n, target)
            }
        };
        Ok(ModelSpec {
            kind,
            ds,
            n,
            fc_width,
            config: config.clone(),
        })
    }

    fn net(&self) -> Result<AnyNet> {
        Ok(match self.kind {
            ModelKind::Pe => AnyNet::Pe(PeNet::new(self.ds, &self.config)?),
            ModelKind::FcNonPe => AnyNet::Fc(FcNet::new(self.ds, self.n, self.fc_width)),
        })
    }
}

/// One trained (or freshly initialized) Gaussian environment model.
#[derive(Clone, Debug)]
pub struct LearnedModel {
    spec: ModelSpec,
    net: AnyNet,
    params: ParamSet,
    norm: Normalizer,
}

impl LearnedModel {
    pub fn init(spec: ModelSpec, norm: Normalizer, seed: u64) -> Result<Self> {
        if norm.ds() != spec.ds {
            return Err(Error::shape("model", format!("normalizer has {} features, spec {}", norm.ds(), spec.ds)));
        }
        let net = spec.net()?;
        let mut params = ParamSet::new();
        net.init(&mut params, &mut rng::stream(seed, "model-init", 0))?;
        Ok(LearnedModel {
            spec,
            net,
            params,
            norm,
        })
    }

    pub fn from_parts(spec: ModelSpec, norm: Normalizer, params: ParamSet) -> Result<Self> {
        let mut m = LearnedModel::init(spec, norm, 0)?;
        for (name, t) in m.params.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                _ => return Err(Error::Schema(format!("checkpoint lacks or misshapes parameter {name}"))),
            }
        }
        if params.len() != m.params.len() {
            return Err(Error::Schema("checkpoint has unexpected parameters".into()));
        }
        m.params = params;
        Ok(m)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.norm
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    /// Predicts with the representative at row position `rep` (its reward
    /// is the one reported).
    pub fn predict_batch_rep(&self, states: &Tensor, actions: &Tensor, rep: usize) -> Result<BatchPrediction> {
        let (batch, n) = actions.shape();
        let ds = self.spec.ds;
        let records = build_records(&self.norm, states, actions, rep)?;
        let mut tape = Tape::new();
        let rv = tape.constant(records);
        let out = self.net.forward(&mut tape, &self.params.frozen(), rv, batch, n, rep)?;
        let min_var = self.spec.config.min_variance;
        let width = n * ds + 1;
        let mut mean = Tensor::zeros(batch, width);
        let mut var = Tensor::zeros(batch, width);
        let (smu, sraw) = (tape.value(out.state_mu), tape.value(out.state_raw));
        let (rmu, rraw) = (tape.value(out.reward_mu), tape.value(out.reward_raw));
        let nm = &self.norm;
        for b in 0..batch {
            let s = states.row(b);
            let (mrow, vrow) = (mean.row_mut(b), var.row_mut(b));
            for i in 0..n {
                for f in 0..ds {
                    let k = i * ds + f;
                    let sd = nm.delta_std[f];
                    mrow[k] = s[k] + nm.delta_mean[f] + sd * smu.get(b * n + i, f);
                    vrow[k] = sd * sd * (min_var + softplus(sraw.get(b * n + i, f)));
                }
            }
            mrow[n * ds] = nm.reward_mean + nm.reward_std * rmu.get(b, 0);
            vrow[n * ds] = nm.reward_std * nm.reward_std * (min_var + softplus(rraw.get(b, 0)));
        }
        Ok(BatchPrediction { mean, variance: var })
    }
}

impl EnvModel for LearnedModel {
    fn label(&self) -> String {
        match self.spec.kind {
            ModelKind::Pe => "pe".into(),
            ModelKind::FcNonPe => "fc_non_pe".into(),
        }
    }

    fn predict_batch(&self, states: &Tensor, actions: &Tensor) -> Result<BatchPrediction> {
        let n = actions.cols();
        if n == 0 {
            return Err(Error::shape("predict", "no advertisers".to_string()));
        }
        self.predict_batch_rep(states, actions, n - 1)
    }
}

/// Normalized training tensors.
struct Prepared {
    n: usize,
    records: Tensor,
    state_targets: Tensor,
    reward_targets: Tensor,
}

impl Prepared {
    fn new(ds_set: &DataSet, norm: &Normalizer) -> Result<Self> {
        let n = ds_set.meta.n;
        let d = ds_set.meta.ds;
        let count = ds_set.len();
        let rows = |f: &dyn Fn(usize) -> Vec<f64>| -> Result<Tensor> {
            Tensor::from_rows(&(0..count).map(f).collect::<Vec<_>>())
        };
        let states = rows(&|k| ds_set.transitions[k].global_state.clone())?;
        let actions = rows(&|k| ds_set.transitions[k].joint_action.clone())?;
        let records = build_records(norm, &states, &actions, n - 1)?;
        let mut state_targets = Tensor::zeros(count * n, d);
        let mut reward_targets = Tensor::zeros(count, 1);
        for (k, tr) in ds_set.transitions.iter().enumerate() {
            for i in 0..n {
                let row = state_targets.row_mut(k * n + i);
                for f in 0..d {
                    let delta = tr.next_global_state[i * d + f] - tr.global_state[i * d + f];
                    row[f] = (delta - norm.delta_mean[f]) / norm.delta_std[f];
                }
            }
            reward_targets.set(k, 0, (tr.reward - norm.reward_mean) / norm.reward_std);
        }
        Ok(Prepared {
            n,
            records,
            state_targets,
            reward_targets,
        })
    }

    fn len(&self) -> usize {
        self.reward_targets.rows()
    }

    fn gather(&self, idx: &[usize]) -> (Tensor, Tensor, Tensor) {
        let n = self.n;
        let ent: Vec<usize> = idx.iter().flat_map(|&k| (0..n).map(move |i| k * n + i)).collect();
        let take = |t: &Tensor, rows: &[usize]| {
            let mut out = Tensor::zeros(rows.len(), t.cols());
            for (r, &src) in rows.iter().enumerate() {
                out.row_mut(r).copy_from_slice(t.row(src));
            }
            out
        };
        (take(&self.records, &ent), take(&self.state_targets, &ent), take(&self.reward_targets, idx))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Mean training loss of the initial parameters.
    pub init_train_loss: f64,
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Mean training loss of the returned parameters.
    pub final_train_loss: f64,
}

fn batch_loss(model: &LearnedModel, data: &Prepared, idx: &[usize], train: bool) -> Result<(f64, Option<crate::diffcore::ParamGrads>)> {
    let (rec, st, rt) = data.gather(idx);
    let mut tape = Tape::new();
    let rv = tape.constant(rec);
    let sv = tape.constant(st);
    let tv = tape.constant(rt);
    let bind = if train { model.params.train() } else { model.params.frozen() };
    let n = data.n;
    let out = model.net.forward(&mut tape, &bind, rv, idx.len(), n, n - 1)?;
    let loss = nll_on_tape(&mut tape, &out, sv, tv, n, model.spec.config.min_variance)?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::Diverged(format!("model loss became {value}")));
    }
    let grads = if train { Some(tape.backward(loss)?.into_params()) } else { None };
    Ok((value, grads))
}

impl LearnedModel {
    /// Mean negative log-likelihood of `data` under the model, in normalized
    /// units.
    pub fn loss(&self, data: &DataSet) -> Result<f64> {
        mean_loss(self, &Prepared::new(data, &self.norm)?)
    }

    /// Finite-difference check of the analytic gradient of the training loss
    /// on `data` (at most the first 64 transitions).
    pub fn grad_check_loss(&self, data: &DataSet, cfg: &GradCheckConfig, rng: &mut Rng) -> Result<GradCheckReport> {
        let prepared = Prepared::new(data, &self.norm)?;
        let idx: Vec<usize> = (0..prepared.len().min(64)).collect();
        let (rec, st, rt) = prepared.gather(&idx);
        let n = prepared.n;
        grad_check_graph(
            &self.params,
            |tape, bind| {
                let rv = tape.constant(rec.clone());
                let sv = tape.constant(st.clone());
                let tv = tape.constant(rt.clone());
                let out = self.net.forward(tape, bind, rv, idx.len(), n, n - 1)?;
                nll_on_tape(tape, &out, sv, tv, n, self.spec.config.min_variance)
            },
            cfg,
            rng,
        )
    }
}

fn mean_loss(model: &LearnedModel, data: &Prepared) -> Result<f64> {
    let total = data.len();
    let mut sum = 0.0;
    let idx: Vec<usize> = (0..total).collect();
    for chunk in idx.chunks(1024) {
        sum += batch_loss(model, data, chunk, false)?.0 * chunk.len() as f64;
    }
    Ok(sum / total.max(1) as f64)
}

/// Splits off a validation set by episode. With a single episode (or a zero
/// fraction) the training data doubles as validation data.
pub(crate) fn validation_split(train: &DataSet, fraction: f64, seed: u64) -> (DataSet, DataSet) {
    if train.episode_ids().len() >= 2 && fraction > 0.0 {
        if let Ok(pair) = split(train, fraction, rng::derive_seed(seed, "model-val", 0)) {
            return pair;
        }
    }
    (train.clone(), train.clone())
}

/// Minibatch Adam on the mean negative log-likelihood; the parameters with
/// the best validation loss are returned.
pub fn train_model(train: &DataSet, spec: &ModelSpec, seed: u64) -> Result<(LearnedModel, TrainingLog)> {
    check_data(train, spec)?;
    let (fit, val) = validation_split(train, spec.config.validation_fraction, seed);
    let norm = Normalizer::fit(&fit)?;
    fit_model(&fit, &val, norm, spec, seed)
}

pub(crate) fn check_data(train: &DataSet, spec: &ModelSpec) -> Result<()> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    if train.meta.ds != spec.ds {
        return Err(Error::shape("train_model", format!("data ds {} vs model ds {}", train.meta.ds, spec.ds)));
    }
    if spec.kind == ModelKind::FcNonPe && train.meta.n != spec.n {
        return Err(Error::shape("train_model", format!("data has {} advertisers, model {}", train.meta.n, spec.n)));
    }
    Ok(())
}

/// Trains one model on `fit`, selecting parameters on `val`. `seed` drives
/// initialization and minibatch order only.
pub(crate) fn fit_model(fit: &DataSet, val: &DataSet, norm: Normalizer, spec: &ModelSpec, seed: u64) -> Result<(LearnedModel, TrainingLog)> {
    let cfg = &spec.config;
    let mut model = LearnedModel::init(spec.clone(), norm, seed)?;
    let fit_data = Prepared::new(fit, &model.norm)?;
    let val_data = Prepared::new(val, &model.norm)?;

    let init_train_loss = mean_loss(&model, &fit_data)?;
    let mut best = model.params.values_only();
    let mut best_val = mean_loss(&model, &val_data)?;
    let mut best_epoch = 0;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut order: Vec<usize> = (0..fit_data.len()).collect();
    let mut shuffle_rng = rng::stream(seed, "model-shuffle", 0);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (loss, grads) = batch_loss(&model, &fit_data, chunk, true)?;
            model.params.adam_step(&grads.expect("training pass"), &adam)?;
            sum += loss * chunk.len() as f64;
        }
        let train_loss = sum / fit_data.len() as f64;
        let val_loss = mean_loss(&model, &val_data)?;
        if val_loss < best_val {
            best_val = val_loss;
            best = model.params.values_only();
            best_epoch = epoch;
        }
        epochs.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });
    }
    model.params = best;
    let final_train_loss = mean_loss(&model, &fit_data)?;
    Ok((
        model,
        TrainingLog {
            init_train_loss,
            epochs,
            best_epoch,
            best_val_loss: best_val,
            final_train_loss,
        },
    ))
}
