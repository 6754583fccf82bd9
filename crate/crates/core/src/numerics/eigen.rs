//! Symmetric eigendecomposition by cyclic Jacobi rotations.
//!
//! Output convention: eigenvalues in non-increasing order, eigenvector `j` in
//! column `j` of [`EigenSystem::vectors`], and each eigenvector oriented so its
//! largest-magnitude entry is non-negative (first such entry on ties). The
//! orientation rule makes downstream trajectories reproducible.

use serde::{Deserialize, Serialize};

use super::matrix::{dot, Matrix, SymMatrix};
use crate::error::{check_dim, invalid, Result};

/// Sweeps stop once the off-diagonal Frobenius norm drops below this fraction
/// of the input's Frobenius norm.
pub const JACOBI_TOLERANCE: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSystem {
    /// Eigenvalues, non-increasing.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors, one per column, paired with `values`.
    pub vectors: Matrix,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn vector(&self, j: usize) -> Vec<f64> {
        self.vectors.column(j)
    }

    /// `P diag(values) Pᵀ` for caller-supplied `values`.
    pub fn reconstruct(&self, values: &[f64]) -> SymMatrix {
        let n = self.dim();
        assert_eq!(values.len(), n);
        let p = &self.vectors;
        SymMatrix::from_fn(n, |i, j| {
            let mut s = 0.0;
            for (k, &v) in values.iter().enumerate() {
                s += p.get(i, k) * v * p.get(j, k);
            }
            s
        })
    }

    /// Coordinates `Pᵀ x` of `x` in the eigenbasis.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(x.len(), n);
        let mut out = vec![0.0; n];
        for (i, &xi) in x.iter().enumerate() {
            let row = self.vectors.row(i);
            for (o, &p) in out.iter_mut().zip(row) {
                *o += xi * p;
            }
        }
        out
    }
}

/// Eigendecomposition of a symmetric matrix.
pub fn sym_eigen(a: &SymMatrix) -> Result<EigenSystem> {
    if !a.is_finite() {
        return Err(invalid("matrix has non-finite entries"));
    }
    let n = a.dim();
    let work = a.as_slice().to_vec();
    let basis = Matrix::identity(n).as_slice().to_vec();
    Ok(jacobi(n, work, basis, a.frobenius_norm()))
}

/// Eigendecomposition started from a previous eigenbasis.
///
/// The matrix is first rotated into `guess`'s basis; when `a` is close to the
/// matrix `guess` came from, that rotation is already nearly diagonal and
/// Jacobi needs one or two sweeps instead of a full run. The result follows
/// the same ordering and orientation convention as [`sym_eigen`].
pub fn sym_eigen_warm(a: &SymMatrix, guess: &EigenSystem) -> Result<EigenSystem> {
    if !a.is_finite() {
        return Err(invalid("matrix has non-finite entries"));
    }
    let n = a.dim();
    check_dim(n, guess.dim())?;
    // Rows of `pt` are the previous eigenvectors.
    let pt = guess.vectors.transpose();
    let rotated = a.congruence(&pt);
    Ok(jacobi(
        n,
        rotated.as_slice().to_vec(),
        pt.as_slice().to_vec(),
        a.frobenius_norm(),
    ))
}

/// Runs cyclic Jacobi on the symmetric `work` matrix, applying each rotation
/// to the rows of `basis` as well. On entry `work = B A Bᵀ` for the original
/// matrix `A`; that invariant is kept, so on exit the rows of `basis` are the
/// eigenvectors of `A`.
fn jacobi(n: usize, mut a: Vec<f64>, mut vt: Vec<f64>, scale: f64) -> EigenSystem {
    let tol = JACOBI_TOLERANCE * scale;
    // Rotating an element smaller than this cannot matter for convergence:
    // even if every off-diagonal entry sat at this size the off-norm would be
    // below `tol`.
    let negligible = 0.1 * tol / (n.max(1) as f64);

    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(n, &a) <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= negligible {
                    continue;
                }
                rotate(n, &mut a, &mut vt, p, q);
            }
        }
    }

    let mut pairs: Vec<(f64, usize)> = (0..n).map(|i| (a[i * n + i], i)).collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));

    let mut values = Vec::with_capacity(n);
    let mut vectors = Matrix::zeros(n);
    for (j, &(value, src)) in pairs.iter().enumerate() {
        values.push(value);
        let row = &vt[src * n..(src + 1) * n];
        let mut pivot = 0;
        for (i, v) in row.iter().enumerate() {
            if v.abs() > row[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if row[pivot] < 0.0 { -1.0 } else { 1.0 };
        for (i, &v) in row.iter().enumerate() {
            vectors.set(i, j, sign * v);
        }
    }
    EigenSystem { values, vectors }
}

fn off_diagonal_norm(n: usize, a: &[f64]) -> f64 {
    let mut s = 0.0;
    for p in 0..n {
        for q in (p + 1)..n {
            s += a[p * n + q] * a[p * n + q];
        }
    }
    (2.0 * s).sqrt()
}

/// Annihilates `a[p][q]` with a plane rotation.
fn rotate(n: usize, a: &mut [f64], vt: &mut [f64], p: usize, q: usize) {
    let apq = a[p * n + q];
    let app = a[p * n + p];
    let aqq = a[q * n + q];
    let theta = (aqq - app) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = a[p * n + k];
        let akq = a[q * n + k];
        let new_p = c * akp - s * akq;
        let new_q = s * akp + c * akq;
        a[p * n + k] = new_p;
        a[k * n + p] = new_p;
        a[q * n + k] = new_q;
        a[k * n + q] = new_q;
    }
    a[p * n + p] = app - t * apq;
    a[q * n + q] = aqq + t * apq;
    a[p * n + q] = 0.0;
    a[q * n + p] = 0.0;

    let (head, tail) = vt.split_at_mut(q * n);
    let row_p = &mut head[p * n..(p + 1) * n];
    let row_q = &mut tail[..n];
    for (vp, vq) in row_p.iter_mut().zip(row_q.iter_mut()) {
        let x = *vp;
        let y = *vq;
        *vp = c * x - s * y;
        *vq = s * x + c * y;
    }
}

/// Largest `|(Pᵀ P − I)_ij|`, for checking orthonormality.
pub fn orthonormality_defect(p: &Matrix) -> f64 {
    let n = p.dim();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let ci = p.column(i);
        for j in 0..n {
            let cj = p.column(j);
            let expect = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot(&ci, &cj) - expect).abs());
        }
    }
    worst
}
