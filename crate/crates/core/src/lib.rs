//! Online robust covariance estimation and outlier detection.
//!
//! The robust estimator ([`pipeline::RobustState`]) tracks the geometric
//! median, the median covariation matrix (MCM), and covariance eigenvalues
//! recovered from the MCM spectrum by a Robbins–Monro recursion. Every step
//! costs `O(d²)` plus one symmetric eigendecomposition, and each observation
//! is scored with a scaled Mahalanobis distance. [`naive::NaiveState`] is the
//! classical non-robust counterpart.

pub mod detection;
pub mod error;
pub mod experiment;
pub mod geom_median;
pub mod mcm;
pub mod metrics;
pub mod naive;
pub mod numerics;
pub mod pipeline;
pub mod simgen;
pub mod spectral;
pub mod step;

pub use detection::DetectionRecord;
pub use error::{Error, Result};
pub use naive::NaiveState;
pub use pipeline::{Mode, RobustConfig, RobustState};
