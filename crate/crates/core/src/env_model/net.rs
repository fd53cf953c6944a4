use crate::diffcore::{Binding, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

use super::fc::FcNet;
use super::normalize::Normalizer;
use super::pe::PeNet;

/// Raw network heads in normalized units. States are `(batch * n) x ds`,
/// rewards `batch x 1`; `*_raw` become variances through
/// `min_variance + softplus`.
pub(crate) struct NetOut {
    pub state_mu: Var,
    pub state_raw: Var,
    pub reward_mu: Var,
    pub reward_raw: Var,
}

pub(crate) trait Net {
    fn init(&self, ps: &mut ParamSet, rng: &mut Rng) -> Result<()>;
    fn num_params(&self) -> usize;
    fn forward(&self, tape: &mut Tape, b: &Binding<'_>, records: Var, batch: usize, n: usize, rep: usize) -> Result<NetOut>;
}

#[derive(Clone, Debug)]
pub(crate) enum AnyNet {
    Pe(PeNet),
    Fc(FcNet),
}

impl Net for AnyNet {
    fn init(&self, ps: &mut ParamSet, rng: &mut Rng) -> Result<()> {
        match self {
            AnyNet::Pe(n) => n.init(ps, rng),
            AnyNet::Fc(n) => n.init(ps, rng),
        }
    }

    fn num_params(&self) -> usize {
        match self {
            AnyNet::Pe(n) => n.num_params(),
            AnyNet::Fc(n) => n.num_params(),
        }
    }

    fn forward(&self, tape: &mut Tape, b: &Binding<'_>, records: Var, batch: usize, n: usize, rep: usize) -> Result<NetOut> {
        match self {
            AnyNet::Pe(net) => net.forward(tape, b, records, batch, n, rep),
            AnyNet::Fc(net) => net.forward(tape, b, records, batch, n, rep),
        }
    }
}

/// Per-advertiser input rows `[normalized state ‖ normalized action ‖ is_rep]`,
/// `batch * n` rows of width `ds + 2`.
pub(crate) fn build_records(norm: &Normalizer, states: &Tensor, actions: &Tensor, rep: usize) -> Result<Tensor> {
    let ds = norm.ds();
    let (batch, n) = actions.shape();
    if states.shape() != (batch, n * ds) {
        return Err(Error::shape(
            "model input",
            format!("states {:?} do not match actions {:?} with ds = {ds}", states.shape(), actions.shape()),
        ));
    }
    if rep >= n {
        return Err(Error::InvalidArgument(format!("representative index {rep} out of {n}")));
    }
    let w = ds + 2;
    let mut out = Tensor::zeros(batch * n, w);
    for b in 0..batch {
        let s = states.row(b);
        let a = actions.row(b);
        for i in 0..n {
            let row = out.row_mut(b * n + i);
            for f in 0..ds {
                row[f] = (s[i * ds + f] - norm.state_mean[f]) / norm.state_std[f];
            }
            row[ds] = (a[i] - norm.action_mean) / norm.action_std;
            row[ds + 1] = if i == rep { 1.0 } else { 0.0 };
        }
    }
    Ok(out)
}

/// Mean per-sample Gaussian negative log-likelihood on the tape:
/// `Σ (t - μ)² / v + Σ log v + sqrt(Σ v²)` over all `n * ds + 1` outputs.
pub(crate) fn nll_on_tape(
    tape: &mut Tape,
    out: &NetOut,
    state_targets: Var,
    reward_targets: Var,
    n: usize,
    min_variance: f64,
) -> Result<Var> {
    let sv = tape.softplus(out.state_raw);
    let sv = tape.add_scalar(sv, min_variance);
    let rv = tape.softplus(out.reward_raw);
    let rv = tape.add_scalar(rv, min_variance);

    let d = tape.sub(state_targets, out.state_mu)?;
    let d2 = tape.square(d);
    let q = tape.div(d2, sv)?;
    let lv = tape.ln(sv);
    let per_dim = tape.add(q, lv)?;
    let per_entity = tape.row_sum(per_dim);
    let per_sample = tape.group_mean(per_entity, n)?;
    let state_terms = tape.scale(per_sample, n as f64);

    let dr = tape.sub(reward_targets, out.reward_mu)?;
    let dr2 = tape.square(dr);
    let qr = tape.div(dr2, rv)?;
    let lr = tape.ln(rv);
    let reward_terms = tape.add(qr, lr)?;

    let sv2 = tape.square(sv);
    let sv2 = tape.row_sum(sv2);
    let sv2 = tape.group_mean(sv2, n)?;
    let sv2 = tape.scale(sv2, n as f64);
    let rv2 = tape.square(rv);
    let frob = tape.add(sv2, rv2)?;
    let frob = tape.sqrt(frob);

    let total = tape.add(state_terms, reward_terms)?;
    let total = tape.add(total, frob)?;
    Ok(tape.mean_all(total))
}
