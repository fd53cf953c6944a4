//! Sliced Wasserstein-1 distance between empirical point clouds.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_PROJECTIONS: usize = 128;

/// Exact W1 between two 1-D empirical distributions with uniform weights.
/// Sizes may differ; the quantile functions are integrated piecewise.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "wasserstein_1d needs nonempty samples");
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        return a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    }
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let next_a = (i + 1) as f64 / n;
        let next_b = (j + 1) as f64 / m;
        let next = next_a.min(next_b);
        total += (next - u) * (a[i] - b[j]).abs();
        u = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    total
}

/// Mean over `n_projections` random unit directions of the 1-D W1 between
/// the projected clouds. The directions depend only on `seed` and the
/// dimension, so distances computed with one seed form a metric.
pub fn sliced_wasserstein(a: &[Vec<f64>], b: &[Vec<f64>], n_projections: usize, seed: u64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("sliced_wasserstein needs two nonempty sets".into()));
    }
    if n_projections == 0 {
        return Err(Error::InvalidArgument("n_projections must be >= 1".into()));
    }
    let dim = a[0].len();
    if let Some(bad) = a.iter().chain(b).find(|v| v.len() != dim) {
        return Err(Error::shape("sliced_wasserstein", format!("dimension {} vs {dim}", bad.len())));
    }
    let dirs = directions(dim, n_projections, seed);
    let project = |set: &[Vec<f64>], u: &[f64]| -> Vec<f64> {
        set.iter().map(|v| v.iter().zip(u).map(|(x, y)| x * y).sum()).collect()
    };
    let total: f64 = dirs.iter().map(|u| wasserstein_1d(&project(a, u), &project(b, u))).sum();
    Ok(total / n_projections as f64)
}

pub(crate) fn directions(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, "sliced-wasserstein", dim as u64);
    (0..count)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cloud(n: usize, dim: usize, shift: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::from_seed(seed);
        (0..n).map(|_| (0..dim).map(|_| r.random::<f64>() + shift).collect()).collect()
    }

    // Brute force W1 for 1-D samples: expand both to a common lcm-sized grid.
    fn brute_w1(a: &[f64], b: &[f64]) -> f64 {
        fn gcd(x: usize, y: usize) -> usize {
            if y == 0 { x } else { gcd(y, x % y) }
        }
        let l = a.len() / gcd(a.len(), b.len()) * b.len();
        let expand = |s: &[f64]| {
            let mut s = s.to_vec();
            s.sort_by(f64::total_cmp);
            let rep = l / s.len();
            s.iter().flat_map(|&x| std::iter::repeat_n(x, rep)).collect::<Vec<_>>()
        };
        let (ea, eb) = (expand(a), expand(b));
        ea.iter().zip(&eb).map(|(x, y)| (x - y).abs()).sum::<f64>() / l as f64
    }

    #[test]
    fn identical_sets_are_zero() {
        let a = cloud(40, 6, 0.0, 1);
        assert_eq!(sliced_wasserstein(&a, &a, 64, 3).unwrap(), 0.0);
    }

    #[test]
    fn point_masses() {
        let a = vec![vec![0.0]];
        for c in [2.5, -1.25] {
            let b = vec![vec![c]];
            let d = sliced_wasserstein(&a, &b, 16, 0).unwrap();
            assert!((d - c.abs()).abs() < 1e-12, "{d}");
        }
    }

    #[test]
    fn matches_per_projection_oracle() {
        let a = cloud(30, 4, 0.0, 2);
        let b = cloud(45, 4, 0.3, 3);
        let dirs = directions(4, 32, 11);
        let mut oracle = 0.0;
        for u in &dirs {
            let pa: Vec<f64> = a.iter().map(|v| v.iter().zip(u).map(|(x, y)| x * y).sum()).collect();
            let pb: Vec<f64> = b.iter().map(|v| v.iter().zip(u).map(|(x, y)| x * y).sum()).collect();
            oracle += brute_w1(&pa, &pb);
        }
        oracle /= 32.0;
        let d = sliced_wasserstein(&a, &b, 32, 11).unwrap();
        assert!((d - oracle).abs() < 1e-12, "{d} vs {oracle}");
    }

    #[test]
    fn unequal_sizes_match_brute_force() {
        let mut r = rng::from_seed(9);
        for (n, m) in [(1, 5), (3, 7), (6, 4), (10, 15)] {
            let a: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..m).map(|_| r.random_range(-2.0..2.0)).collect();
            assert!((wasserstein_1d(&a, &b) - brute_w1(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_and_triangle() {
        for s in 0..10 {
            let a = cloud(20, 3, 0.0, 100 + s);
            let b = cloud(25, 3, 0.5, 200 + s);
            let c = cloud(15, 3, -0.2, 300 + s);
            let ab = sliced_wasserstein(&a, &b, 64, s).unwrap();
            let ba = sliced_wasserstein(&b, &a, 64, s).unwrap();
            let ac = sliced_wasserstein(&a, &c, 64, s).unwrap();
            let cb = sliced_wasserstein(&c, &b, 64, s).unwrap();
            assert!((ab - ba).abs() < 1e-12);
            assert!(ab <= ac + cb + 1e-9);
        }
    }

    #[test]
    fn dim_mismatch_is_error() {
        let a = vec![vec![0.0, 1.0]];
        let b = vec![vec![0.0]];
        assert!(sliced_wasserstein(&a, &b, 8, 0).is_err());
    }
}
