//! Dense square matrices and small vector helpers.
//!
//! Everything here is row-major and owns its storage. Dimensions in this crate
//! stay in the low hundreds, so there is no blocking or SIMD trickery.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct Matrix {
    dim: usize,
    entries: Vec<f64>,
}

impl Matrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.entries[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut entries = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                entries.push(f(i, j));
            }
        }
        Self { dim, entries }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut entries = Vec::with_capacity(dim * dim);
        for row in rows {
            check_dim(dim, row.len())?;
            entries.extend_from_slice(row);
        }
        Ok(Self { dim, entries })
    }

    pub(crate) fn from_raw(dim: usize, entries: Vec<f64>) -> Self {
        debug_assert_eq!(entries.len(), dim * dim);
        Self { dim, entries }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.entries[i * self.dim + j] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.dim..(i + 1) * self.dim]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.entries
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Matrix) -> Self {
        assert_eq!(self.dim, other.dim, "matmul dimension mismatch");
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            let out_row = &mut out[i * n..(i + 1) * n];
            for k in 0..n {
                let a = self.entries[i * n + k];
                if a == 0.0 {
                    continue;
                }
                let other_row = other.row(k);
                for (o, &b) in out_row.iter_mut().zip(other_row) {
                    *o += a * b;
                }
            }
        }
        Self::from_raw(n, out)
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.dim, v.len(), "mul_vec dimension mismatch");
        (0..self.dim).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.entries)
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|v| v.is_finite())
    }

    /// Largest `|a_ij - a_ji|` over all index pairs.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim {
            for j in (i + 1)..self.dim {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Symmetric matrix. Construction symmetrises the input as `(A + Aᵀ) / 2`, so
/// `get(i, j) == get(j, i)` holds bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix", into = "Matrix")]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    pub fn new(m: Matrix) -> Self {
        let mut m = m;
        symmetrize_in_place(&mut m);
        Self(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Ok(Self::new(Matrix::from_rows(rows)?))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(Matrix::zeros(dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(Matrix::identity(dim))
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        Self(Matrix::from_fn(n, |i, j| if i == j { values[i] } else { 0.0 }))
    }

    /// `u uᵀ`.
    pub fn outer(u: &[f64]) -> Self {
        Self(Matrix::from_fn(u.len(), |i, j| u[i] * u[j]))
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize, usize) -> f64) -> Self {
        Self::new(Matrix::from_fn(dim, f))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    /// Raw access for in-place updates. Callers must leave the matrix
    /// exactly symmetric.
    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        self.0.as_mut_slice()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.frobenius_norm()
    }

    /// `‖self − other‖_F`.
    pub fn frobenius_distance(&self, other: &SymMatrix) -> f64 {
        assert_eq!(self.dim(), other.dim());
        self.as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn scaled(&self, factor: f64) -> SymMatrix {
        Self(Matrix::from_raw(
            self.dim(),
            self.as_slice().iter().map(|v| v * factor).collect(),
        ))
    }

    /// `self + factor · other`.
    pub fn add_scaled(&self, other: &SymMatrix, factor: f64) -> SymMatrix {
        assert_eq!(self.dim(), other.dim());
        Self(Matrix::from_raw(
            self.dim(),
            self.as_slice()
                .iter()
                .zip(other.as_slice())
                .map(|(a, b)| a + factor * b)
                .collect(),
        ))
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        self.0.mul_vec(v)
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        assert_eq!(self.dim(), x.len());
        (0..self.dim()).map(|i| x[i] * dot(self.row(i), x)).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.is_finite()
    }

    /// `B A Bᵀ` for a square `B`.
    pub fn congruence(&self, b: &Matrix) -> SymMatrix {
        SymMatrix::new(b.matmul(&self.0).matmul(&b.transpose()))
    }
}

#[derive(Serialize, Deserialize)]
struct RawMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        if raw.entries.len() != raw.dim * raw.dim {
            return Err(invalid("matrix entry count does not match its dimension"));
        }
        Ok(Self {
            dim: raw.dim,
            entries: raw.entries,
        })
    }
}

impl From<Matrix> for RawMatrix {
    fn from(m: Matrix) -> Self {
        Self {
            dim: m.dim,
            entries: m.entries,
        }
    }
}

impl TryFrom<Matrix> for SymMatrix {
    type Error = Error;

    fn try_from(m: Matrix) -> Result<Self> {
        Ok(Self::new(m))
    }
}

impl From<SymMatrix> for Matrix {
    fn from(s: SymMatrix) -> Self {
        s.0
    }
}

fn symmetrize_in_place(m: &mut Matrix) {
    let n = m.dim;
    for i in 0..n {
        for j in (i + 1)..n {
            let a = m.entries[i * n + j];
            let b = m.entries[j * n + i];
            let avg = if a == b { a } else { 0.5 * (a + b) };
            m.entries[i * n + j] = avg;
            m.entries[j * n + i] = avg;
        }
    }
}

/// Lower-triangular Cholesky factor of a positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Matrix,
}

impl Cholesky {
    /// Fails with [`Error::NotPositiveDefinite`] when a pivot is not strictly
    /// positive relative to the largest diagonal entry.
    pub fn new(a: &SymMatrix) -> Result<Self> {
        let n = a.dim();
        if !a.is_finite() {
            return Err(invalid("matrix has non-finite entries"));
        }
        let max_diag = (0..n).map(|i| a.get(i, i).abs()).fold(0.0, f64::max);
        let pivot_floor = max_diag * 1e-14;
        let mut l = Matrix::zeros(n);
        for j in 0..n {
            let mut diag = a.get(j, j);
            for k in 0..j {
                diag -= l.get(j, k) * l.get(j, k);
            }
            if !(diag > pivot_floor) {
                return Err(Error::NotPositiveDefinite);
            }
            let ljj = diag.sqrt();
            l.set(j, j, ljj);
            for i in (j + 1)..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, s / ljj);
            }
        }
        Ok(Self { lower: l })
    }

    pub fn dim(&self) -> usize {
        self.lower.dim()
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    /// Solves `L y = b`.
    pub fn forward(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = b.to_vec();
        for i in 0..n {
            let row = self.lower.row(i);
            let s = dot(&row[..i], &y[..i]);
            y[i] = (y[i] - s) / row[i];
        }
        y
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut x = self.forward(b);
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.lower.get(k, i) * x[k];
            }
            x[i] = s / self.lower.get(i, i);
        }
        x
    }

    /// `bᵀ A⁻¹ b`.
    pub fn inv_quad_form(&self, b: &[f64]) -> f64 {
        let y = self.forward(b);
        dot(&y, &y)
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim())
            .map(|i| self.lower.get(i, i).ln())
            .sum::<f64>()
    }

    pub fn inverse(&self) -> SymMatrix {
        let n = self.dim();
        let mut inv = Matrix::zeros(n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for (i, v) in col.into_iter().enumerate() {
                inv.set(i, j, v);
            }
        }
        SymMatrix::new(inv)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
