//! Permutation-equivariant network: per-advertiser blocks with shared
//! weights predict next local states; a set-level head predicts the
//! representative's reward.

use crate::diffcore::{pool_mean_max, Activation, Binding, Dense, Mlp, MultiHeadAttention, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

use super::net::{Net, NetOut};
use super::ModelConfig;

#[derive(Clone, Debug)]
pub(crate) struct PeNet {
    ds: usize,
    fc1: Mlp,
    embed_l: Dense,
    att_l: MultiHeadAttention,
    fc2: Mlp,
    embed_r: Dense,
    att_r: MultiHeadAttention,
    own_r: Dense,
    head_r: Mlp,
}

impl PeNet {
    pub(crate) fn new(ds: usize, cfg: &ModelConfig) -> Result<Self> {
        let rec = ds + 2;
        let (h, e) = (cfg.hidden, cfg.embed_dim);
        Ok(PeNet {
            ds,
            fc1: Mlp::new("left.fc1", &[rec, h, h], Activation::Relu, Activation::Relu),
            embed_l: Dense::new("left.embed", rec, e, Activation::Relu),
            att_l: MultiHeadAttention::new("left.att", e, e, cfg.heads)?,
            fc2: Mlp::new("left.fc2", &[h + 2 * e, h, h, 2 * ds], Activation::Relu, Activation::Linear),
            embed_r: Dense::new("right.embed", rec, e, Activation::Relu),
            att_r: MultiHeadAttention::new("right.att", e, e, cfg.heads)?,
            own_r: Dense::new("right.own", rec, h, Activation::Relu),
            head_r: Mlp::new("right.head", &[2 * e + h, h, 2], Activation::Relu, Activation::Linear),
        })
    }
}

/// Row indices that lay out, for every sample and advertiser `i`, the rows
/// of all other advertisers `j != i` in increasing `j`.
pub(crate) fn leave_one_out_rows(batch: usize, n: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(batch * n * (n - 1));
    for b in 0..batch {
        for i in 0..n {
            idx.extend((0..n).filter(|&j| j != i).map(|j| b * n + j));
        }
    }
    idx
}

impl Net for PeNet {
    fn init(&self, ps: &mut ParamSet, rng: &mut Rng) -> Result<()> {
        self.fc1.init(ps, rng)?;
        self.embed_l.init(ps, rng)?;
        self.att_l.init(ps, rng)?;
        self.fc2.init(ps, rng)?;
        self.embed_r.init(ps, rng)?;
        self.att_r.init(ps, rng)?;
        self.own_r.init(ps, rng)?;
        self.head_r.init(ps, rng)
    }

    fn num_params(&self) -> usize {
        self.fc1.num_params()
            + self.embed_l.num_params()
            + self.att_l.num_params()
            + self.fc2.num_params()
            + self.embed_r.num_params()
            + self.att_r.num_params()
            + self.own_r.num_params()
            + self.head_r.num_params()
    }

    fn forward(&self, tape: &mut Tape, b: &Binding<'_>, records: Var, batch: usize, n: usize, rep: usize) -> Result<NetOut> {
        if n < 2 {
            return Err(Error::InvalidArgument("the model needs at least two advertisers".into()));
        }
        let ds = self.ds;

        // Left network: own features plus a pooled view of everyone else.
        let own = self.fc1.forward(tape, b, records)?;
        let emb = self.embed_l.forward(tape, b, records)?;
        let (q, k, v) = self.att_l.project(tape, b, emb)?;
        let idx = leave_one_out_rows(batch, n);
        let (q, k, v) = (tape.gather_rows(q, &idx)?, tape.gather_rows(k, &idx)?, tape.gather_rows(v, &idx)?);
        let others = self.att_l.attend(tape, b, q, k, v, n - 1)?;
        let others = tape.relu(others);
        let pooled = pool_mean_max(tape, others, n - 1)?;
        let z = tape.concat_cols(&[own, pooled])?;
        let out = self.fc2.forward(tape, b, z)?;
        let state_mu = tape.slice_cols(out, 0, ds)?;
        let state_raw = tape.slice_cols(out, ds, 2 * ds)?;

        // Right network: the whole set, plus the representative's own row.
        let emb_r = self.embed_r.forward(tape, b, records)?;
        let all = self.att_r.forward(tape, b, emb_r, n)?;
        let all = tape.relu(all);
        let pooled_r = pool_mean_max(tape, all, n)?;
        let rep_rows: Vec<usize> = (0..batch).map(|s| s * n + rep).collect();
        let rep_rec = tape.gather_rows(records, &rep_rows)?;
        let own_r = self.own_r.forward(tape, b, rep_rec)?;
        let zr = tape.concat_cols(&[pooled_r, own_r])?;
        let out_r = self.head_r.forward(tape, b, zr)?;
        let reward_mu = tape.slice_cols(out_r, 0, 1)?;
        let reward_raw = tape.slice_cols(out_r, 1, 2)?;
        Ok(NetOut {
            state_mu,
            state_raw,
            reward_mu,
            reward_raw,
        })
    }
}
