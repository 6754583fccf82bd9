//! Deterministic numeric kernel shared by the estimators.

pub mod eigen;
pub mod gamma;
pub mod matrix;
pub mod mvn;
pub mod rng;

pub use eigen::{sym_eigen, sym_eigen_warm, EigenSystem};
pub use gamma::{chi2_cdf, chi2_quantile};
pub use matrix::{Cholesky, Matrix, SymMatrix};
pub use mvn::{mvn_sample, toeplitz, MvnSampler};
pub use rng::RngStream;
