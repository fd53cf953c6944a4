//! Permutation operators on ordered vectors, the orbit-averaging operator and
//! numerical equivariance checks.
//!
//! A [`Permutation`] is stored as an index map: element `i` of the input is
//! sent to position `mapping[i]` of the output. Applying it is `O(n)`.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Largest entity count for which `n!` enumeration is allowed.
pub const MAX_ENUMERABLE: usize = 6;
/// Largest entity count checked exhaustively by [`check_equivariance`].
pub const MAX_EXHAUSTIVE: usize = 4;
/// Number of sampled permutations used above [`MAX_EXHAUSTIVE`].
pub const SAMPLED_PERMUTATIONS: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation {
            mapping: (0..n).collect(),
        }
    }

    /// Transposition of positions `i` and `j`.
    pub fn swap(n: usize, i: usize, j: usize) -> Result<Self> {
        if i >= n || j >= n {
            return Err(Error::InvalidArgument(format!(
                "swap({i}, {j}) out of range for n = {n}"
            )));
        }
        let mut p = Self::identity(n);
        p.mapping.swap(i, j);
        Ok(p)
    }

    pub fn from_mapping(mapping: Vec<usize>) -> Result<Self> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &m in &mapping {
            if m >= n || seen[m] {
                return Err(Error::InvalidArgument(format!(
                    "mapping {mapping:?} is not a bijection on 0..{n}"
                )));
            }
            seen[m] = true;
        }
        Ok(Permutation { mapping })
    }

    /// Uniformly random permutation of `n` elements.
    pub fn random(n: usize, rng: &mut Rng) -> Self {
        let mut mapping: Vec<usize> = (0..n).collect();
        mapping.shuffle(rng);
        Permutation { mapping }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    /// Position that input element `i` is sent to.
    pub fn target(&self, i: usize) -> usize {
        self.mapping[i]
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.mapping.len()];
        for (i, &m) in self.mapping.iter().enumerate() {
            inv[m] = i;
        }
        Permutation { mapping: inv }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Permutation) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot compose permutations of sizes {} and {}",
                self.len(),
                other.len()
            )));
        }
        Ok(Permutation {
            mapping: other.mapping.iter().map(|&m| self.mapping[m]).collect(),
        })
    }

    pub fn is_identity(&self) -> bool {
        self.mapping.iter().enumerate().all(|(i, &m)| i == m)
    }

    /// Rearranges `v`: `out[mapping[i]] = v[i]`.
    pub fn apply<T: Clone>(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.len() {
            return Err(Error::InvalidArgument(format!(
                "vector of length {} cannot be permuted by a permutation of {}",
                v.len(),
                self.len()
            )));
        }
        let mut out: Vec<Option<T>> = vec![None; v.len()];
        for (i, x) in v.iter().enumerate() {
            out[self.mapping[i]] = Some(x.clone());
        }
        Ok(out.into_iter().map(|x| x.expect("bijection")).collect())
    }

    /// Permutes fixed-width blocks of a flat vector: block `i` (of width
    /// `width`) moves to block position `mapping[i]`.
    pub fn apply_blocks(&self, flat: &[f64], width: usize) -> Result<Vec<f64>> {
        if flat.len() != self.len() * width {
            return Err(Error::InvalidArgument(format!(
                "flat vector of length {} is not {} blocks of width {width}",
                flat.len(),
                self.len()
            )));
        }
        let mut out = vec![0.0; flat.len()];
        for i in 0..self.len() {
            let dst = self.mapping[i] * width;
            out[dst..dst + width].copy_from_slice(&flat[i * width..(i + 1) * width]);
        }
        Ok(out)
    }
}

/// Free-function form of [`Permutation::apply`].
pub fn apply_perm<T: Clone>(v: &[T], rho: &Permutation) -> Result<Vec<T>> {
    rho.apply(v)
}

/// All `n!` permutations of `n` elements in lexicographic order of mapping.
pub fn all_perms(n: usize) -> Result<Vec<Permutation>> {
    if n > MAX_ENUMERABLE {
        return Err(Error::InvalidArgument(format!(
            "refusing to enumerate {n}! permutations (limit n <= {MAX_ENUMERABLE})"
        )));
    }
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..n).collect();
    loop {
        out.push(Permutation {
            mapping: current.clone(),
        });
        if !next_lexicographic(&mut current) {
            break;
        }
    }
    Ok(out)
}

fn next_lexicographic(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Per-entity record.
pub type Record = Vec<f64>;

/// A function from an ordered set of per-entity records to either one output
/// record per entity (equivariant case) or a single output record
/// (invariant case).
pub trait SetFunction {
    /// Width of each input record.
    fn record_dim(&self) -> usize;

    fn eval(&self, x: &[Record]) -> Vec<Record>;
}

impl<T: SetFunction + ?Sized> SetFunction for &T {
    fn record_dim(&self) -> usize {
        (**self).record_dim()
    }

    fn eval(&self, x: &[Record]) -> Vec<Record> {
        (**self).eval(x)
    }
}

/// Adapts a closure into a [`SetFunction`].
pub struct FnSet<F> {
    record_dim: usize,
    f: F,
}

impl<F> FnSet<F>
where
    F: Fn(&[Record]) -> Vec<Record>,
{
    pub fn new(record_dim: usize, f: F) -> Self {
        FnSet { record_dim, f }
    }
}

impl<F> SetFunction for FnSet<F>
where
    F: Fn(&[Record]) -> Vec<Record>,
{
    fn record_dim(&self) -> usize {
        self.record_dim
    }

    fn eval(&self, x: &[Record]) -> Vec<Record> {
        (self.f)(x)
    }
}

/// `Qf(x) = (1/n!) Σ_ρ ρ⁻¹ f(ρx)`. Invariant (single-record) outputs are
/// averaged without un-permuting.
pub struct OrbitAverage<F> {
    inner: F,
    perms: Vec<Permutation>,
}

pub fn orbit_average<F: SetFunction>(f: F, n: usize) -> Result<OrbitAverage<F>> {
    Ok(OrbitAverage {
        inner: f,
        perms: all_perms(n)?,
    })
}

impl<F: SetFunction> SetFunction for OrbitAverage<F> {
    fn record_dim(&self) -> usize {
        self.inner.record_dim()
    }

    fn eval(&self, x: &[Record]) -> Vec<Record> {
        let n = x.len();
        assert_eq!(n, self.perms[0].len(), "orbit average built for a different n");
        let mut acc: Option<Vec<Record>> = None;
        for rho in &self.perms {
            let px = rho.apply(x).expect("length checked");
            let mut y = self.inner.eval(&px);
            if y.len() == n && n > 1 {
                y = rho.inverse().apply(&y).expect("output length n");
            }
            match acc.as_mut() {
                None => acc = Some(y),
                Some(a) => {
                    for (ar, yr) in a.iter_mut().zip(&y) {
                        for (av, yv) in ar.iter_mut().zip(yr) {
                            *av += yv;
                        }
                    }
                }
            }
        }
        let scale = 1.0 / self.perms.len() as f64;
        let mut out = acc.expect("at least one permutation");
        for r in &mut out {
            for v in r.iter_mut() {
                *v *= scale;
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Symmetry {
    /// Outputs permute with the inputs.
    Equivariant,
    /// Output is unchanged by input permutations.
    Invariant,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivarianceReport {
    pub max_violation: f64,
    pub inputs_checked: usize,
    pub permutations_checked: usize,
    pub pass: bool,
}

/// Permutations used for a check over `n` entities: all of them when
/// `n <= 4`, otherwise 64 random draws.
pub fn check_permutations(n: usize, rng: &mut Rng) -> Vec<Permutation> {
    if n <= MAX_EXHAUSTIVE {
        all_perms(n).expect("n <= 4")
    } else {
        (0..SAMPLED_PERMUTATIONS)
            .map(|_| Permutation::random(n, rng))
            .collect()
    }
}

/// ℓ₁ violation of the symmetry at a single input for a single permutation.
pub fn violation<F: SetFunction + ?Sized>(
    f: &F,
    x: &[Record],
    rho: &Permutation,
    symmetry: Symmetry,
) -> f64 {
    let fx = f.eval(x);
    let px = rho.apply(x).expect("permutation sized to input");
    let fpx = f.eval(&px);
    let expected = match symmetry {
        Symmetry::Equivariant => rho.apply(&fx).expect("equivariant output has n records"),
        Symmetry::Invariant => fx,
    };
    l1_distance(&fpx, &expected)
}

pub(crate) fn l1_distance(a: &[Record], b: &[Record]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(ra, rb)| {
            if ra.len() != rb.len() {
                f64::INFINITY
            } else {
                ra.iter().zip(rb).map(|(x, y)| (x - y).abs()).sum::<f64>()
            }
        })
        .sum()
}

/// Checks `f` on explicitly supplied inputs and permutations.
pub fn check_equivariance_on<F: SetFunction + ?Sized>(
    f: &F,
    inputs: &[Vec<Record>],
    perms: &[Permutation],
    symmetry: Symmetry,
    tol: f64,
) -> EquivarianceReport {
    let mut max_violation = 0.0f64;
    for x in inputs {
        for rho in perms {
            let v = violation(f, x, rho, symmetry);
            if v.is_nan() {
                max_violation = f64::INFINITY;
            } else {
                max_violation = max_violation.max(v);
            }
        }
    }
    EquivarianceReport {
        max_violation,
        inputs_checked: inputs.len(),
        permutations_checked: perms.len(),
        pass: max_violation <= tol,
    }
}

/// Draws `samples` standard-normal inputs of `n` records and checks the
/// symmetry under every permutation (`n <= 4`) or 64 sampled ones.
pub fn check_equivariance<F: SetFunction + ?Sized>(
    f: &F,
    n: usize,
    samples: usize,
    symmetry: Symmetry,
    tol: f64,
    rng: &mut Rng,
) -> EquivarianceReport {
    let inputs = random_inputs(n, f.record_dim(), samples, rng);
    let perms = check_permutations(n, rng);
    check_equivariance_on(f, &inputs, &perms, symmetry, tol)
}

pub fn random_inputs(n: usize, record_dim: usize, samples: usize, rng: &mut Rng) -> Vec<Vec<Record>> {
    (0..samples)
        .map(|_| {
            (0..n)
                .map(|_| {
                    (0..record_dim)
                        .map(|_| StandardNormal.sample(rng))
                        .collect()
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn apply_perm_examples() {
        let v = ['a', 'b', 'c'];
        assert_eq!(apply_perm(&v, &Permutation::identity(3)).unwrap(), v);
        let swap = Permutation::swap(2, 0, 1).unwrap();
        assert_eq!(apply_perm(&['a', 'b'], &swap).unwrap(), ['b', 'a']);
        let cycle = Permutation::from_mapping(vec![1, 2, 0]).unwrap();
        assert_eq!(apply_perm(&v, &cycle).unwrap(), ['c', 'a', 'b']);
    }

    #[test]
    fn apply_perm_length_mismatch() {
        let p = Permutation::identity(3);
        assert!(apply_perm(&[1, 2], &p).is_err());
    }

    #[test]
    fn from_mapping_rejects_non_bijections() {
        assert!(Permutation::from_mapping(vec![0, 0, 1]).is_err());
        assert!(Permutation::from_mapping(vec![0, 3, 1]).is_err());
    }

    #[test]
    fn all_perms_counts() {
        assert_eq!(all_perms(1).unwrap(), vec![Permutation::identity(1)]);
        let p3 = all_perms(3).unwrap();
        assert_eq!(p3.len(), 6);
        let distinct: std::collections::HashSet<_> = p3.iter().collect();
        assert_eq!(distinct.len(), 6);
        assert_eq!(all_perms(4).unwrap().len(), 24);
        assert_eq!(all_perms(6).unwrap().len(), 720);
        assert!(all_perms(7).is_err());
    }

    #[test]
    fn compose_and_inverse() {
        let p = Permutation::from_mapping(vec![2, 0, 3, 1]).unwrap();
        assert!(p.compose(&p.inverse()).unwrap().is_identity());
        assert!(p.inverse().compose(&p).unwrap().is_identity());
        assert_eq!(p.inverse().inverse(), p);
        let q = Permutation::swap(4, 1, 3).unwrap();
        let v = [10, 20, 30, 40];
        let direct = q.apply(&p.apply(&v).unwrap()).unwrap();
        assert_eq!(q.compose(&p).unwrap().apply(&v).unwrap(), direct);
    }

    #[test]
    fn orbit_average_hand_computed() {
        // f(x1, x2) = (x1, 0) averaged over both orderings of (3, 5).
        let f = FnSet::new(1, |x: &[Record]| vec![x[0].clone(), vec![0.0]]);
        let q = orbit_average(f, 2).unwrap();
        let out = q.eval(&[vec![3.0], vec![5.0]]);
        assert_eq!(out, vec![vec![1.5], vec![2.5]]);
    }

    #[test]
    fn orbit_average_of_identity_is_identity() {
        let f = FnSet::new(2, |x: &[Record]| x.to_vec());
        let q = orbit_average(f, 3).unwrap();
        let x = vec![vec![1.0, -2.0], vec![0.5, 4.0], vec![3.0, 3.0]];
        assert_eq!(q.eval(&x), x);
    }

    #[test]
    fn orbit_average_refuses_large_n() {
        let f = FnSet::new(1, |x: &[Record]| x.to_vec());
        assert!(orbit_average(f, 7).is_err());
    }

    #[test]
    fn sorting_is_not_equivariant() {
        let sort = FnSet::new(1, |x: &[Record]| {
            let mut v: Vec<f64> = x.iter().map(|r| r[0]).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v.into_iter().map(|s| vec![s]).collect()
        });
        let swap = Permutation::swap(2, 0, 1).unwrap();
        let v = violation(&sort, &[vec![1.0], vec![2.0]], &swap, Symmetry::Equivariant);
        assert_eq!(v, 2.0);
        let mut r = rng::from_seed(3);
        let report = check_equivariance(&sort, 3, 8, Symmetry::Equivariant, 1e-9, &mut r);
        assert!(!report.pass);
        assert!(report.max_violation > 0.0);
    }

    #[test]
    fn sum_is_invariant_exactly() {
        let sum = FnSet::new(1, |x: &[Record]| vec![vec![x.iter().map(|r| r[0]).sum()]]);
        let mut r = rng::from_seed(4);
        // Integer-valued inputs make the sum exact in every order.
        let inputs: Vec<Vec<Record>> = (0..10)
            .map(|k| (0..3).map(|i| vec![(k * 3 + i) as f64 - 7.0]).collect())
            .collect();
        let perms = check_permutations(3, &mut r);
        let report = check_equivariance_on(&sum, &inputs, &perms, Symmetry::Invariant, 0.0);
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn sampled_permutations_above_exhaustive_limit() {
        let mut r = rng::from_seed(5);
        assert_eq!(check_permutations(4, &mut r).len(), 24);
        assert_eq!(check_permutations(6, &mut r).len(), SAMPLED_PERMUTATIONS);
    }

    #[test]
    fn block_permutation_matches_record_permutation() {
        let p = Permutation::from_mapping(vec![1, 2, 0]).unwrap();
        let flat = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(
            p.apply_blocks(&flat, 2).unwrap(),
            vec![5.0, 6.0, 1.0, 2.0, 3.0, 4.0]
        );
    }
}
