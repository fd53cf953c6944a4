//! Reverse-mode differentiation over a linear tape of matrix operations.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::params::{Binding, ParamGrads};
use super::tensor::gemm;
use super::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    MulCol(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Tanh(usize),
    Softplus(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Square(usize),
    Clamp(usize, f64, f64),
    Concat(Vec<usize>),
    Slice(usize, usize),
    Reshape(usize),
    Gather(usize, Vec<usize>),
    Attention {
        q: usize,
        k: usize,
        v: usize,
        group: usize,
        heads: usize,
        probs: Vec<f64>,
    },
    GroupMean(usize, usize),
    GroupMax(usize, Vec<usize>),
    RowSum(usize),
    SumAll(usize),
    MeanAll(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records operations as they are evaluated; [`Tape::backward`] then
/// propagates gradients to every leaf that requires them.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(usize, String)>,
}

/// Result of a backward pass.
#[derive(Debug)]
pub struct Gradients {
    leaves: Vec<Option<Tensor>>,
    params: ParamGrads,
}

impl Gradients {
    /// Gradient with respect to a leaf created by [`Tape::input`] or a
    /// trainable parameter.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn params(&self) -> &ParamGrads {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads {
        self.params
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Sum of a few values in sorted order, so the result does not depend on
/// the order in which they are supplied.
fn sorted_sum(buf: &mut [f64]) -> f64 {
    buf.sort_by(f64::total_cmp);
    buf.iter().sum()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// A leaf that does not receive a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Places parameter `name` on the tape. Trainable bindings report the
    /// gradient under the same name.
    pub fn param(&mut self, b: &Binding<'_>, name: &str) -> Result<Var> {
        let t = b
            .set
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))?
            .clone();
        let v = self.push(t, Op::Leaf, b.trainable);
        if b.trainable {
            self.params.push((v.0, name.to_string()));
        }
        Ok(v)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a.0) || self.ng(b.0);
        Ok(self.push(out, Op::MatMul(a.0, b.0), ng))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::shape("add_bias", format!("{:?} + {:?}", av.shape(), bv.shape())));
        }
        let mut out = av.clone();
        let cols = out.cols();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(&bv.data()[..cols]) {
                *o += b;
            }
        }
        let ng = self.ng(a.0) || self.ng(bias.0);
        Ok(self.push(out, Op::AddBias(a.0, bias.0), ng))
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let out = self.value(a).zip_map(self.value(b), f);
        let ng = self.ng(a.0) || self.ng(b.0);
        Ok(self.push(out, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a.0, b.0))
    }

    /// Multiplies row `r` of `a` by `s[r]`, where `s` is `rows x 1`.
    pub fn mul_col(&mut self, a: Var, s: Var) -> Result<Var> {
        let (av, sv) = (self.value(a), self.value(s));
        if sv.cols() != 1 || sv.rows() != av.rows() {
            return Err(Error::shape("mul_col", format!("{:?} * {:?}", av.shape(), sv.shape())));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            let k = sv.data()[r];
            out.row_mut(r).iter_mut().for_each(|x| *x *= k);
        }
        let ng = self.ng(a.0) || self.ng(s.0);
        Ok(self.push(out, Op::MulCol(a.0, s.0), ng))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| k * x);
        let ng = self.ng(a.0);
        self.push(out, Op::Scale(a.0, k), ng)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x + k);
        let ng = self.ng(a.0);
        self.push(out, Op::AddScalar(a.0), ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        let ng = self.ng(a.0);
        self.push(out, op, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a.0))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a.0))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a.0))
    }

    /// Elementwise clamp; the gradient is zero where the bound is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, move |x| x.clamp(lo, hi), Op::Clamp(a.0, lo, hi))
    }

    /// Horizontal concatenation of tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|p| self.value(*p).rows())
            .ok_or_else(|| Error::shape("concat_cols", "no inputs".to_string()))?;
        if let Some(p) = parts.iter().find(|p| self.value(**p).rows() != rows) {
            return Err(Error::shape("concat_cols", format!("{} rows vs {rows}", self.value(*p).rows())));
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let src = self.value(*p).row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let ng = parts.iter().any(|p| self.ng(p.0));
        Ok(self.push(out, Op::Concat(parts.iter().map(|p| p.0).collect()), ng))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        if start > end || end > av.cols() {
            return Err(Error::shape("slice_cols", format!("{start}..{end} of {} columns", av.cols())));
        }
        let mut out = Tensor::zeros(av.rows(), end - start);
        for r in 0..av.rows() {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..end]);
        }
        let ng = self.ng(a.0);
        Ok(self.push(out, Op::Slice(a.0, start), ng))
    }

    /// Same data viewed with a different shape (row-major order kept).
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = Tensor::new(rows, cols, self.value(a).data().to_vec())?;
        let ng = self.ng(a.0);
        Ok(self.push(out, Op::Reshape(a.0), ng))
    }

    /// Row `r` of the output is row `idx[r]` of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= av.rows()) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {}", av.rows())));
        }
        let mut out = Tensor::zeros(idx.len(), av.cols());
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(av.row(i));
        }
        let ng = self.ng(a.0);
        Ok(self.push(out, Op::Gather(a.0, idx.to_vec()), ng))
    }

    /// Scaled dot-product attention within consecutive row groups of size
    /// `group`, split into `heads` heads along the columns. No mixing happens
    /// across groups.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, group: usize, heads: usize) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (rows, e) = qv.shape();
        if kv.shape() != (rows, e) || vv.shape() != (rows, e) {
            return Err(Error::shape("attention", "q, k, v shapes differ".to_string()));
        }
        if group == 0 || rows % group != 0 {
            return Err(Error::shape("attention", format!("{rows} rows in groups of {group}")));
        }
        if heads == 0 || e % heads != 0 {
            return Err(Error::Config(format!("embedding width {e} not divisible by {heads} heads")));
        }
        let dh = e / heads;
        let inv = 1.0 / (dh as f64).sqrt();
        let groups = rows / group;
        let mut probs = vec![0.0; groups * heads * group * group];
        let mut out = Tensor::zeros(rows, e);
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        for gi in 0..groups {
            let r0 = gi * group;
            for h in 0..heads {
                let c0 = h * dh;
                let p = &mut probs[(gi * heads + h) * group * group..][..group * group];
                for a in 0..group {
                    let qa = &qd[(r0 + a) * e + c0..][..dh];
                    let mut mx = f64::NEG_INFINITY;
                    for b in 0..group {
                        let kb = &kd[(r0 + b) * e + c0..][..dh];
                        let s = qa.iter().zip(kb).map(|(x, y)| x * y).sum::<f64>() * inv;
                        p[a * group + b] = s;
                        mx = mx.max(s);
                    }
                    let row = &mut p[a * group..][..group];
                    let mut z = 0.0;
                    for s in row.iter_mut() {
                        *s = (*s - mx).exp();
                        z += *s;
                    }
                    row.iter_mut().for_each(|s| *s /= z);
                    let o = &mut out.data_mut()[(r0 + a) * e + c0..][..dh];
                    for b in 0..group {
                        let w = p[a * group + b];
                        let vb = &vd[(r0 + b) * e + c0..][..dh];
                        for (oo, x) in o.iter_mut().zip(vb) {
                            *oo += w * x;
                        }
                    }
                }
            }
        }
        let ng = self.ng(q.0) || self.ng(k.0) || self.ng(v.0);
        Ok(self.push(
            out,
            Op::Attention {
                q: q.0,
                k: k.0,
                v: v.0,
                group,
                heads,
                probs,
            },
            ng,
        ))
    }

    fn check_groups(&self, op: &'static str, a: Var, group: usize) -> Result<()> {
        let rows = self.value(a).rows();
        if group == 0 || rows == 0 || rows % group != 0 {
            return Err(Error::shape(op, format!("{rows} rows in groups of {group}")));
        }
        Ok(())
    }

    /// Mean over consecutive row groups. Each column is summed in sorted
    /// order, so permuting rows within a group leaves the result bitwise
    /// unchanged.
    pub fn group_mean(&mut self, a: Var, group: usize) -> Result<Var> {
        self.check_groups("group_mean", a, group)?;
        let av = self.value(a);
        let (rows, cols) = av.shape();
        let mut out = Tensor::zeros(rows / group, cols);
        let mut buf = vec![0.0; group];
        for gi in 0..rows / group {
            for c in 0..cols {
                for (m, b) in buf.iter_mut().enumerate() {
                    *b = av.get(gi * group + m, c);
                }
                out.set(gi, c, sorted_sum(&mut buf) / group as f64);
            }
        }
        let ng = self.ng(a.0);
        Ok(self.push(out, Op::GroupMean(a.0, group), ng))
    }

    /// Elementwise max over consecutive row groups.
    pub fn group_max(&mut self, a: Var, group: usize) -> Result<Var> {
        self.check_groups("group_max", a, group)?;
        let av = self.value(a);
        let (rows, cols) = av.shape();
        let mut out = Tensor::zeros(rows / group, cols);
        let mut arg = vec![0; (rows / group) * cols];
        for gi in 0..rows / group {
            for c in 0..cols {
                let mut best = gi * group;
                for m in 1..group {
                    if av.get(gi * group + m, c) > av.get(best, c) {
                        best = gi * group + m;
                    }
                }
                out.set(gi, c, av.get(best, c));
                arg[gi * cols + c] = best;
            }
        }
        let ng = self.ng(a.0);
        Ok(self.push(out, Op::GroupMax(a.0, arg), ng))
    }

    /// `rows x 1` row sums.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = (0..av.rows()).map(|r| av.row(r).iter().sum()).collect();
        let out = Tensor::new(av.rows(), 1, data).expect("row_sum shape");
        let ng = self.ng(a.0);
        self.push(out, Op::RowSum(a.0), ng)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(a.0);
        self.push(Tensor::scalar(s), Op::SumAll(a.0), ng)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let s = av.data().iter().sum::<f64>() / av.len().max(1) as f64;
        let ng = self.ng(a.0);
        self.push(Tensor::scalar(s), Op::MeanAll(a.0), ng)
    }

    /// Backpropagates from a `1 x 1` output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        let shape = self.value(out).shape();
        if shape != (1, 1) {
            return Err(Error::shape("backward", format!("output is {shape:?}, expected a scalar")));
        }
        self.backward_with(out, Tensor::scalar(1.0))
    }

    /// Backpropagates an arbitrary output gradient `seed`.
    pub fn backward_with(&self, out: Var, seed: Tensor) -> Result<Gradients> {
        if seed.shape() != self.value(out).shape() {
            return Err(Error::shape("backward", "seed shape differs from output".to_string()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
        }
        let mut params: ParamGrads = BTreeMap::new();
        for (idx, name) in &self.params {
            if let Some(g) = &grads[*idx] {
                match params.get_mut(name) {
                    Some(acc) => acc.add_assign(g),
                    None => {
                        params.insert(name.clone(), g.clone());
                    }
                }
            }
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if !matches!(n.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Ok(Gradients { leaves: grads, params })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], i: usize) -> &'g mut Tensor {
        let (r, c) = self.nodes[i].value.shape();
        grads[i].get_or_insert_with(|| Tensor::zeros(r, c))
    }

    fn acc_map(&self, grads: &mut [Option<Tensor>], i: usize, g: &Tensor, f: impl Fn(usize, f64) -> f64) {
        if !self.ng(i) {
            return;
        }
        let dst = self.slot(grads, i);
        for (k, (d, gv)) in dst.data_mut().iter_mut().zip(g.data()).enumerate() {
            *d += f(k, *gv);
        }
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |j: usize| &self.nodes[j].value;
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    let dst = self.slot(grads, *a);
                    gemm(g, false, val(*b), true, dst, 1.0);
                }
                if self.ng(*b) {
                    let dst = self.slot(grads, *b);
                    gemm(val(*a), true, g, false, dst, 1.0);
                }
            }
            Op::AddBias(a, b) => {
                self.acc_map(grads, *a, g, |_, x| x);
                if self.ng(*b) {
                    let cols = g.cols();
                    let dst = self.slot(grads, *b);
                    for r in 0..g.rows() {
                        for (d, x) in dst.data_mut()[..cols].iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                self.acc_map(grads, *a, g, |_, x| x);
                self.acc_map(grads, *b, g, |_, x| x);
            }
            Op::Sub(a, b) => {
                self.acc_map(grads, *a, g, |_, x| x);
                self.acc_map(grads, *b, g, |_, x| -x);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                self.acc_map(grads, *a, g, |k, x| x * bv[k]);
                self.acc_map(grads, *b, g, |k, x| x * av[k]);
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                self.acc_map(grads, *a, g, |k, x| x / bv[k]);
                self.acc_map(grads, *b, g, |k, x| -x * av[k] / (bv[k] * bv[k]));
            }
            Op::MulCol(a, s) => {
                let (av, sv) = (val(*a), val(*s));
                let cols = av.cols();
                self.acc_map(grads, *a, g, |k, x| x * sv.data()[k / cols]);
                if self.ng(*s) {
                    let dst = self.slot(grads, *s);
                    for r in 0..av.rows() {
                        dst.data_mut()[r] += g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
            Op::Scale(a, k) => self.acc_map(grads, *a, g, |_, x| k * x),
            Op::AddScalar(a) => self.acc_map(grads, *a, g, |_, x| x),
            Op::Relu(a) => {
                let o = out.data();
                self.acc_map(grads, *a, g, |k, x| if o[k] > 0.0 { x } else { 0.0 });
            }
            Op::Tanh(a) => {
                let o = out.data();
                self.acc_map(grads, *a, g, |k, x| x * (1.0 - o[k] * o[k]));
            }
            Op::Softplus(a) => {
                let av = val(*a).data();
                self.acc_map(grads, *a, g, |k, x| x * sigmoid(av[k]));
            }
            Op::Exp(a) => {
                let o = out.data();
                self.acc_map(grads, *a, g, |k, x| x * o[k]);
            }
            Op::Log(a) => {
                let av = val(*a).data();
                self.acc_map(grads, *a, g, |k, x| x / av[k]);
            }
            Op::Sqrt(a) => {
                let o = out.data();
                self.acc_map(grads, *a, g, |k, x| 0.5 * x / o[k]);
            }
            Op::Square(a) => {
                let av = val(*a).data();
                self.acc_map(grads, *a, g, |k, x| 2.0 * av[k] * x);
            }
            Op::Clamp(a, lo, hi) => {
                let av = val(*a).data();
                self.acc_map(grads, *a, g, |k, x| if av[k] < *lo || av[k] > *hi { 0.0 } else { x });
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if self.ng(p) {
                        let dst = self.slot(grads, p);
                        for r in 0..g.rows() {
                            for (d, x) in dst.row_mut(r).iter_mut().zip(&g.row(r)[off..off + w]) {
                                *d += x;
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::Slice(a, start) => {
                if self.ng(*a) {
                    let w = g.cols();
                    let dst = self.slot(grads, *a);
                    for r in 0..g.rows() {
                        for (d, x) in dst.row_mut(r)[*start..*start + w].iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                }
            }
            Op::Reshape(a) => self.acc_map(grads, *a, g, |_, x| x),
            Op::Gather(a, idx) => {
                if self.ng(*a) {
                    let dst = self.slot(grads, *a);
                    for (r, &src) in idx.iter().enumerate() {
                        for (d, x) in dst.row_mut(src).iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                group,
                heads,
                probs,
            } => self.backprop_attention(grads, g, *q, *k, *v, *group, *heads, probs),
            Op::GroupMean(a, group) => {
                if self.ng(*a) {
                    let inv = 1.0 / *group as f64;
                    let dst = self.slot(grads, *a);
                    for r in 0..dst.rows() {
                        let gr = g.row(r / group);
                        for (d, x) in dst.row_mut(r).iter_mut().zip(gr) {
                            *d += x * inv;
                        }
                    }
                }
            }
            Op::GroupMax(a, arg) => {
                if self.ng(*a) {
                    let cols = g.cols();
                    let dst = self.slot(grads, *a);
                    for (k, &src) in arg.iter().enumerate() {
                        let c = k % cols;
                        let cur = dst.get(src, c);
                        dst.set(src, c, cur + g.data()[k]);
                    }
                }
            }
            Op::RowSum(a) => {
                let cols = val(*a).cols();
                if self.ng(*a) {
                    let dst = self.slot(grads, *a);
                    for (k, d) in dst.data_mut().iter_mut().enumerate() {
                        *d += g.data()[k / cols];
                    }
                }
            }
            Op::SumAll(a) => {
                let s = g.item();
                if self.ng(*a) {
                    self.slot(grads, *a).data_mut().iter_mut().for_each(|d| *d += s);
                }
            }
            Op::MeanAll(a) => {
                let s = g.item() / val(*a).len().max(1) as f64;
                if self.ng(*a) {
                    self.slot(grads, *a).data_mut().iter_mut().for_each(|d| *d += s);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_attention(
        &self,
        grads: &mut [Option<Tensor>],
        g: &Tensor,
        q: usize,
        k: usize,
        v: usize,
        group: usize,
        heads: usize,
        probs: &[f64],
    ) {
        let (qv, kv, vv) = (&self.nodes[q].value, &self.nodes[k].value, &self.nodes[v].value);
        let (rows, e) = qv.shape();
        let dh = e / heads;
        let inv = 1.0 / (dh as f64).sqrt();
        let mut dq = Tensor::zeros(rows, e);
        let mut dk = Tensor::zeros(rows, e);
        let mut dv = Tensor::zeros(rows, e);
        let (qd, kd, vd, gd) = (qv.data(), kv.data(), vv.data(), g.data());
        let mut dp = vec![0.0; group * group];
        for gi in 0..rows / group {
            let r0 = gi * group;
            for h in 0..heads {
                let c0 = h * dh;
                let p = &probs[(gi * heads + h) * group * group..][..group * group];
                for a in 0..group {
                    let ga = &gd[(r0 + a) * e + c0..][..dh];
                    for b in 0..group {
                        let w = p[a * group + b];
                        let vb = &vd[(r0 + b) * e + c0..][..dh];
                        dp[a * group + b] = ga.iter().zip(vb).map(|(x, y)| x * y).sum();
                        let dvb = &mut dv.data_mut()[(r0 + b) * e + c0..][..dh];
                        for (d, x) in dvb.iter_mut().zip(ga) {
                            *d += w * x;
                        }
                    }
                    let dot: f64 = (0..group).map(|b| p[a * group + b] * dp[a * group + b]).sum();
                    for b in 0..group {
                        let ds = p[a * group + b] * (dp[a * group + b] - dot) * inv;
                        if ds == 0.0 {
                            continue;
                        }
                        let kb = &kd[(r0 + b) * e + c0..][..dh];
                        let qa = &qd[(r0 + a) * e + c0..][..dh];
                        for (d, x) in dq.data_mut()[(r0 + a) * e + c0..][..dh].iter_mut().zip(kb) {
                            *d += ds * x;
                        }
                        for (d, x) in dk.data_mut()[(r0 + b) * e + c0..][..dh].iter_mut().zip(qa) {
                            *d += ds * x;
                        }
                    }
                }
            }
        }
        for (idx, t) in [(q, dq), (k, dk), (v, dv)] {
            if self.ng(idx) {
                self.slot(grads, idx).add_assign(&t);
            }
        }
    }
}
