//! Parameterized building blocks on top of the tape.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::params::Binding;
use super::{ParamSet, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    Softplus,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Linear => x,
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Softplus => tape.softplus(x),
        }
    }
}

fn uniform(rows: usize, cols: usize, limit: f64, rng: &mut Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(rows, cols, data).expect("shape")
}

/// `act(x W + b)` with `W: in x out`, stored as `<name>.w` and `<name>.b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub name: String,
    pub input: usize,
    pub output: usize,
    pub act: Activation,
}

impl Dense {
    pub fn new(name: impl Into<String>, input: usize, output: usize, act: Activation) -> Self {
        Dense {
            name: name.into(),
            input,
            output,
            act,
        }
    }

    pub fn init(&self, ps: &mut ParamSet, rng: &mut Rng) -> Result<()> {
        let limit = match self.act {
            Activation::Relu => (6.0 / self.input as f64).sqrt(),
            _ => (6.0 / (self.input + self.output) as f64).sqrt(),
        };
        ps.insert(&format!("{}.w", self.name), uniform(self.input, self.output, limit, rng))?;
        ps.insert(&format!("{}.b", self.name), Tensor::zeros(1, self.output))
    }

    pub fn num_params(&self) -> usize {
        self.input * self.output + self.output
    }

    pub fn forward(&self, tape: &mut Tape, b: &Binding<'_>, x: Var) -> Result<Var> {
        if tape.value(x).cols() != self.input {
            return Err(Error::shape(
                "dense",
                format!("{}: input has {} columns, layer expects {}", self.name, tape.value(x).cols(), self.input),
            ));
        }
        let w = tape.param(b, &format!("{}.w", self.name))?;
        let bias = tape.param(b, &format!("{}.b", self.name))?;
        let h = tape.matmul(x, w)?;
        let h = tape.add_bias(h, bias)?;
        Ok(self.act.apply(tape, h))
    }
}

/// Functional form of a dense layer on plain tensors.
pub fn dense(x: &Tensor, w: &Tensor, b: &Tensor, act: Activation) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
    let h = tape.matmul(xv, wv)?;
    let h = tape.add_bias(h, bv)?;
    let out = act.apply(&mut tape, h);
    Ok(tape.value(out).clone())
}

/// A stack of dense layers named `<name>.0`, `<name>.1`, ...; hidden layers
/// use `hidden_act`, the last layer `out_act`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn new(name: &str, sizes: &[usize], hidden_act: Activation, out_act: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(format!("{name}.{i}"), w[0], w[1], if i == last { out_act } else { hidden_act }))
            .collect();
        Mlp { layers }
    }

    pub fn init(&self, ps: &mut ParamSet, rng: &mut Rng) -> Result<()> {
        self.layers.iter().try_for_each(|l| l.init(ps, rng))
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    pub fn forward(&self, tape: &mut Tape, b: &Binding<'_>, mut x: Var) -> Result<Var> {
        for l in &self.layers {
            x = l.forward(tape, b, x)?;
        }
        Ok(x)
    }
}

/// Multi-head self-attention over sets stored as consecutive row groups.
/// Query/key/value projections have no bias; heads are concatenated and
/// mixed by a dense output layer `<name>.o`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadAttention {
    pub name: String,
    pub input: usize,
    pub embed: usize,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(name: impl Into<String>, input: usize, embed: usize, heads: usize) -> Result<Self> {
        if heads == 0 || embed % heads != 0 {
            return Err(Error::Config(format!("embedding width {embed} not divisible by {heads} heads")));
        }
        Ok(MultiHeadAttention {
            name: name.into(),
            input,
            embed,
            heads,
        })
    }

    fn out_layer(&self) -> Dense {
        Dense::new(format!("{}.o", self.name), self.embed, self.embed, Activation::Linear)
    }

    pub fn init(&self, ps: &mut ParamSet, rng: &mut Rng) -> Result<()> {
        let limit = (6.0 / (self.input + self.embed) as f64).sqrt();
        for p in ["q", "k", "v"] {
            ps.insert(&format!("{}.{p}", self.name), uniform(self.input, self.embed, limit, rng))?;
        }
        self.out_layer().init(ps, rng)
    }

    pub fn num_params(&self) -> usize {
        3 * self.input * self.embed + self.out_layer().num_params()
    }

    /// Projects every row once; returns `(q, k, v)`.
    pub fn project(&self, tape: &mut Tape, b: &Binding<'_>, x: Var) -> Result<(Var, Var, Var)> {
        let mut out = [x; 3];
        for (slot, p) in out.iter_mut().zip(["q", "k", "v"]) {
            let w = tape.param(b, &format!("{}.{p}", self.name))?;
            *slot = tape.matmul(x, w)?;
        }
        Ok((out[0], out[1], out[2]))
    }

    /// Attention within groups of `group` consecutive rows of already
    /// projected `q, k, v`, followed by the output layer.
    pub fn attend(&self, tape: &mut Tape, b: &Binding<'_>, q: Var, k: Var, v: Var, group: usize) -> Result<Var> {
        let a = tape.attention(q, k, v, group, self.heads)?;
        self.out_layer().forward(tape, b, a)
    }

    pub fn forward(&self, tape: &mut Tape, b: &Binding<'_>, x: Var, group: usize) -> Result<Var> {
        let (q, k, v) = self.project(tape, b, x)?;
        self.attend(tape, b, q, k, v, group)
    }
}

/// `[mean ‖ max]` over consecutive row groups of size `group`.
pub fn pool_mean_max(tape: &mut Tape, x: Var, group: usize) -> Result<Var> {
    let mean = tape.group_mean(x, group)?;
    let max = tape.group_max(x, group)?;
    tape.concat_cols(&[mean, max])
}
