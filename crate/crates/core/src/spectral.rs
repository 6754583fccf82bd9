//! Covariance eigenvalues from MCM eigenvalues.
//!
//! For Gaussian data the MCM shares its eigenvectors with the covariance,
//! and its eigenvalues `δ` relate to the covariance eigenvalues `λ` through
//!
//! ```text
//! E[(Aλ − δ) / √h(λ, δ, U)] = 0,   A = diag(U²),  U ~ N(0, I),
//! h(λ, δ, U) = Σ_k (δ_k − λ_k U_k²)² + Σ_{i≠j} U_i² U_j² λ_i λ_j.
//! ```
//!
//! [`RmState`] finds the root with a Robbins–Monro recursion driven by fresh
//! Gaussian draws, plus a log-weighted average of the iterates.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::numerics::RngStream;
use crate::step::StepSchedule;

/// `h(λ, δ, U)` in `O(d)`, using `Σ_{i≠j} a_i a_j = Σ_i a_i (S − a_i)` with
/// `a = λ ⊙ U²` and `S = Σ a`.
pub fn h_value(lambda: &[f64], delta: &[f64], u: &[f64]) -> f64 {
    assert_eq!(lambda.len(), delta.len());
    assert_eq!(lambda.len(), u.len());
    let a: Vec<f64> = lambda.iter().zip(u).map(|(l, v)| l * v * v).collect();
    let total: f64 = a.iter().sum();
    let mut h = 0.0;
    for (ak, dk) in a.iter().zip(delta) {
        h += (dk - ak) * (dk - ak) + ak * (total - ak);
    }
    h.max(0.0)
}

/// Lower bound applied to every `λ` component after each iteration.
pub fn eps_floor(delta: &[f64]) -> f64 {
    1e-10 * delta.iter().cloned().fold(1.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmState {
    pub lambda: Vec<f64>,
    pub lambda_bar: Vec<f64>,
    /// Iterations counted so far, including skipped offsets.
    pub total_iters: u64,
    /// Exponent of the `log(t + 1)^ω` averaging weights.
    pub omega: f64,
    /// `Σ_{ℓ < total_iters} log(ℓ + 1)^ω`.
    pub weight_accum: f64,
    pub step: StepSchedule,
}

impl RmState {
    pub fn new(lambda0: Vec<f64>, omega: f64, step: StepSchedule) -> Result<Self> {
        if lambda0.is_empty() {
            return Err(invalid("eigenvalue vector is empty"));
        }
        if lambda0.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(invalid("initial eigenvalues must be finite and positive"));
        }
        if !(omega >= 0.0 && omega.is_finite()) {
            return Err(invalid(format!("averaging exponent omega = {omega} must be non-negative")));
        }
        step.validate()?;
        Ok(Self {
            lambda_bar: lambda0.clone(),
            lambda: lambda0,
            total_iters: 0,
            omega,
            weight_accum: 0.0,
            step,
        })
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    fn log_weight(&self, index: u64) -> f64 {
        ((index + 1) as f64).ln().powf(self.omega)
    }

    /// Moves the iteration index forward to `offset` without iterating. The
    /// skipped indices still enter the weight normaliser, so later iterates
    /// are weighted as if the skipped ones had happened.
    pub fn advance_to(&mut self, offset: u64) {
        while self.total_iters < offset {
            self.weight_accum += self.log_weight(self.total_iters);
            self.total_iters += 1;
        }
    }

    /// Runs `n_mc` Robbins–Monro iterations towards the `λ` matching `delta`.
    pub fn run(&mut self, delta: &[f64], n_mc: u64, rng: &mut RngStream) -> Result<()> {
        let d = self.dim();
        check_dim(d, delta.len())?;
        if delta.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid("MCM eigenvalues must be finite and non-negative"));
        }
        let floor = eps_floor(delta);
        let mut u = vec![0.0; d];
        let mut a = vec![0.0; d];
        for _ in 0..n_mc {
            let index = self.total_iters;
            rng.fill_standard_normal(&mut u);
            let mut total = 0.0;
            for ((ak, l), v) in a.iter_mut().zip(&self.lambda).zip(&u) {
                *ak = l * v * v;
                total += *ak;
            }
            let mut h = 0.0;
            for (ak, dk) in a.iter().zip(delta) {
                h += (dk - ak) * (dk - ak) + ak * (total - ak);
            }
            if h > 0.0 {
                let scale = self.step.step(index + 1) / h.sqrt();
                for ((l, ak), dk) in self.lambda.iter_mut().zip(&a).zip(delta) {
                    *l = (*l - scale * (ak - dk)).max(floor);
                }
            }

            let w = self.log_weight(index);
            self.weight_accum += w;
            let rate = if self.weight_accum > 0.0 {
                w / self.weight_accum
            } else {
                1.0
            };
            for (b, l) in self.lambda_bar.iter_mut().zip(&self.lambda) {
                *b += rate * (l - *b);
            }
            self.total_iters += 1;
        }
        Ok(())
    }
}

/// MCM eigenvalues implied by covariance eigenvalues `lambda`.
///
/// Solves `δ = E[λ ⊙ U² / √h] / E[1 / √h]` by damped fixed-point iteration,
/// with the expectations replaced by averages over one fixed set of `n_mc`
/// draws. Meant as a test oracle for [`RmState`].
pub fn fixed_point_delta(lambda: &[f64], n_mc: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    const DAMPING: f64 = 0.5;
    const TOLERANCE: f64 = 1e-8;
    const MAX_ITER: usize = 10_000;

    let d = lambda.len();
    if d == 0 || n_mc == 0 {
        return Err(invalid("need a non-empty spectrum and at least one draw"));
    }
    if lambda.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(invalid("eigenvalues must be finite and positive"));
    }
    let mut u2 = vec![0.0; n_mc * d];
    for v in u2.iter_mut() {
        let z = rng.standard_normal();
        *v = z * z;
    }

    let median_chi2_1 = 0.454_936_423_119_572_8;
    let mut delta: Vec<f64> = lambda.iter().map(|l| l * median_chi2_1).collect();
    let mut num = vec![0.0; d];
    let mut a = vec![0.0; d];
    for _ in 0..MAX_ITER {
        num.iter_mut().for_each(|v| *v = 0.0);
        let mut den = 0.0;
        for draw in u2.chunks_exact(d) {
            let mut total = 0.0;
            for ((ak, l), v) in a.iter_mut().zip(lambda).zip(draw) {
                *ak = l * v;
                total += *ak;
            }
            let mut h = 0.0;
            for (ak, dk) in a.iter().zip(&delta) {
                h += (dk - ak) * (dk - ak) + ak * (total - ak);
            }
            if h <= 0.0 {
                continue;
            }
            let w = 1.0 / h.sqrt();
            den += w;
            for (nk, ak) in num.iter_mut().zip(&a) {
                *nk += w * ak;
            }
        }
        let mut change: f64 = 0.0;
        let mut size: f64 = 0.0;
        for (dk, nk) in delta.iter_mut().zip(&num) {
            let next = (1.0 - DAMPING) * *dk + DAMPING * nk / den;
            change = change.max((next - *dk).abs());
            size = size.max(next.abs());
            *dk = next;
        }
        if change <= TOLERANCE * size {
            break;
        }
    }
    Ok(delta)
}
