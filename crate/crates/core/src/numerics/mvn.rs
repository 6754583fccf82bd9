//! Toeplitz correlation matrices and multivariate normal sampling.

use super::eigen::sym_eigen;
use super::matrix::{Matrix, SymMatrix};
use super::rng::RngStream;
use crate::error::{check_dim, invalid, Error, Result};

/// Eigenvalues above `-PSD_TOLERANCE · max(values)` are treated as zero.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// AR(1) correlation matrix with entries `rho^|i-j|`.
pub fn toeplitz(d: usize, rho: f64) -> Result<SymMatrix> {
    if d == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    if !(rho.abs() < 1.0) {
        return Err(invalid(format!("Toeplitz correlation {rho} outside (-1, 1)")));
    }
    Ok(SymMatrix::from_fn(d, |i, j| rho.powi(i.abs_diff(j) as i32)))
}

/// Sampler for `N(mu, sigma)` using the symmetric square root of `sigma`.
///
/// The factor is computed once; each draw consumes exactly `d` standard
/// normals from the stream.
#[derive(Debug, Clone)]
pub struct MvnSampler {
    mu: Vec<f64>,
    /// `P diag(√λ)`, so that `factor · factorᵀ = sigma`.
    factor: Matrix,
}

impl MvnSampler {
    pub fn new(mu: Vec<f64>, sigma: &SymMatrix) -> Result<Self> {
        let d = sigma.dim();
        check_dim(d, mu.len())?;
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(invalid("mean has non-finite entries"));
        }
        let eig = sym_eigen(sigma)?;
        let top = eig.values[0].max(0.0);
        let roots: Vec<f64> = eig
            .values
            .iter()
            .map(|&v| {
                if v < -PSD_TOLERANCE * top || (top == 0.0 && v < 0.0) {
                    Err(Error::NotPsd { eigenvalue: v })
                } else {
                    Ok(v.max(0.0).sqrt())
                }
            })
            .collect::<Result<_>>()?;
        let factor = Matrix::from_fn(d, |i, j| eig.vectors.get(i, j) * roots[j]);
        Ok(Self { mu, factor })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sample(&self, rng: &mut RngStream) -> Vec<f64> {
        let d = self.dim();
        let mut z = vec![0.0; d];
        rng.fill_standard_normal(&mut z);
        let mut x = self.mu.clone();
        for (i, xi) in x.iter_mut().enumerate() {
            let row = self.factor.row(i);
            for (f, zj) in row.iter().zip(&z) {
                *xi += f * zj;
            }
        }
        x
    }
}

/// One draw from `N(mu, sigma)`. Prefer [`MvnSampler`] for repeated draws.
pub fn mvn_sample(rng: &mut RngStream, mu: &[f64], sigma: &SymMatrix) -> Result<Vec<f64>> {
    Ok(MvnSampler::new(mu.to_vec(), sigma)?.sample(rng))
}
