//! Fully connected baseline on the concatenated advertiser records.

use crate::diffcore::{Activation, Binding, Mlp, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

use super::net::{Net, NetOut};

#[derive(Clone, Debug)]
pub(crate) struct FcNet {
    ds: usize,
    n: usize,
    mlp: Mlp,
}

impl FcNet {
    pub(crate) fn new(ds: usize, n: usize, width: usize) -> Self {
        let input = n * (ds + 2);
        let output = 2 * n * ds + 2;
        FcNet {
            ds,
            n,
            mlp: Mlp::new("fc", &[input, width, width, output], Activation::Relu, Activation::Linear),
        }
    }

    /// Hidden width whose parameter count is closest to `target`.
    pub(crate) fn width_for(ds: usize, n: usize, target: usize) -> usize {
        (1..4096)
            .min_by_key(|&w| FcNet::new(ds, n, w).num_params().abs_diff(target))
            .expect("non-empty range")
    }
}

impl Net for FcNet {
    fn init(&self, ps: &mut ParamSet, rng: &mut Rng) -> Result<()> {
        self.mlp.init(ps, rng)
    }

    fn num_params(&self) -> usize {
        self.mlp.num_params()
    }

    fn forward(&self, tape: &mut Tape, b: &Binding<'_>, records: Var, batch: usize, n: usize, _rep: usize) -> Result<NetOut> {
        if n != self.n {
            return Err(Error::shape("fc model", format!("built for {} advertisers, got {n}", self.n)));
        }
        let ds = self.ds;
        let flat = tape.reshape(records, batch, n * (ds + 2))?;
        let out = self.mlp.forward(tape, b, flat)?;
        let nd = n * ds;
        let mu = tape.slice_cols(out, 0, nd)?;
        let raw = tape.slice_cols(out, nd, 2 * nd)?;
        Ok(NetOut {
            state_mu: tape.reshape(mu, batch * n, ds)?,
            state_raw: tape.reshape(raw, batch * n, ds)?,
            reward_mu: tape.slice_cols(out, 2 * nd, 2 * nd + 1)?,
            reward_raw: tape.slice_cols(out, 2 * nd + 1, 2 * nd + 2)?,
        })
    }
}
