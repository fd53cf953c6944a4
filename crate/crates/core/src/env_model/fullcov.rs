//! Full-covariance assembly for inspection. Each output block supplies its
//! row(s) of an unsymmetric matrix `Σ̃`; the covariance is the symmetric
//! part `½(Σ̃ + Σ̃ᵀ)` with eigenvalues raised to a floor so a Cholesky
//! factor exists.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const EIGEN_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct FullCovariance {
    pub matrix: DMatrix<f64>,
    /// Number of eigenvalues raised to the floor.
    pub clipped: usize,
}

impl FullCovariance {
    /// `rows[i]` is row `i` of `Σ̃`; all rows must have length `rows.len()`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::shape("full covariance", format!("need {d} rows of length {d}")));
        }
        let raw = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "full covariance".into(),
                detail: "non-finite entry".into(),
            });
        }
        let sym = (&raw + raw.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let mut clipped = 0;
        let vals = eig.eigenvalues.map(|v| {
            if v < EIGEN_FLOOR {
                clipped += 1;
                EIGEN_FLOOR
            } else {
                v
            }
        });
        let q = &eig.eigenvectors;
        let mut matrix = q * DMatrix::from_diagonal(&vals) * q.transpose();
        // Remove rounding asymmetry.
        matrix = (&matrix + matrix.transpose()) * 0.5;
        Ok(FullCovariance { matrix, clipped })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cholesky(&self) -> Result<DMatrix<f64>> {
        self.matrix
            .clone()
            .cholesky()
            .map(|c| c.l())
            .ok_or_else(|| Error::NonFinite {
                context: "full covariance".into(),
                detail: "Cholesky factorization failed".into(),
            })
    }

    /// `mean + L ε` with `ε ~ N(0, I)`.
    pub fn sample(&self, mean: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        if mean.len() != self.dim() {
            return Err(Error::shape("full covariance sample", format!("mean {} vs dim {}", mean.len(), self.dim())));
        }
        let l = self.cholesky()?;
        let eps = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        let draw = l * eps;
        Ok(mean.iter().zip(draw.iter()).map(|(m, d)| m + d).collect())
    }
}

/// `(t - μ)ᵀ Σ⁻¹ (t - μ) + log|Σ| + ‖Σ‖_F`.
pub fn full_covariance_nll(mean: &[f64], cov: &FullCovariance, target: &[f64]) -> Result<f64> {
    let d = cov.dim();
    if mean.len() != d || target.len() != d {
        return Err(Error::shape("full nll", format!("mean {}, target {}, dim {d}", mean.len(), target.len())));
    }
    let chol = cov.matrix.clone().cholesky().ok_or_else(|| Error::NonFinite {
        context: "full nll".into(),
        detail: "covariance not positive definite".into(),
    })?;
    let diff = DVector::from_fn(d, |i, _| target[i] - mean[i]);
    let sol = chol.solve(&diff);
    let quad = diff.dot(&sol);
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(quad + logdet + cov.matrix.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::{nll_loss, GaussianPrediction};
    use crate::rng;

    #[test]
    fn symmetrizes_and_floors() {
        let rows = vec![vec![2.0, 1.0, 0.0], vec![0.0, 1.0, 0.4], vec![0.0, 0.0, -3.0]];
        let c = FullCovariance::from_rows(&rows).unwrap();
        let m = &c.matrix;
        for i in 0..3 {
            for j in 0..3 {
                assert!((m[(i, j)] - m[(j, i)]).abs() < 1e-15);
            }
        }
        assert!(c.clipped >= 1);
        let eig = m.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&v| v >= EIGEN_FLOOR * 0.999));
        assert!(c.cholesky().is_ok());
    }

    #[test]
    fn diagonal_case_matches_diagonal_nll() {
        let var = [0.5, 2.0, 1.5, 0.1];
        let rows: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| if i == j { var[i] } else { 0.0 }).collect()).collect();
        let c = FullCovariance::from_rows(&rows).unwrap();
        let mean = [0.1, -0.2, 0.3, 0.0];
        let target = [0.4, 0.1, -0.5, 0.2];
        let full = full_covariance_nll(&mean, &c, &target).unwrap();
        let diag = nll_loss(
            &GaussianPrediction {
                mean: mean.to_vec(),
                variance: var.to_vec(),
            },
            &target,
        )
        .unwrap();
        assert!((full - diag).abs() < 1e-12, "{full} vs {diag}");
    }

    #[test]
    fn samples_have_requested_covariance() {
        let rows = vec![vec![1.0, 0.8], vec![0.8, 1.0]];
        let c = FullCovariance::from_rows(&rows).unwrap();
        let mut r = rng::from_seed(3);
        let n = 20_000;
        let mut sxy = 0.0;
        for _ in 0..n {
            let s = c.sample(&[0.0, 0.0], &mut r).unwrap();
            sxy += s[0] * s[1];
        }
        assert!((sxy / n as f64 - 0.8).abs() < 0.05);
    }
}
