//! Decreasing step sequences `γ_n = scale · c · (n + n0)^(−γ)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub c_gamma: f64,
    /// Decay exponent, in `(1/2, 1)`.
    pub gamma: f64,
    pub n0: u64,
    /// 1 for one observation per step, `√s` for blocks of `s`.
    pub batch_scale: f64,
}

impl StepSchedule {
    pub fn new(c_gamma: f64, gamma: f64, n0: u64) -> Result<Self> {
        let s = Self {
            c_gamma,
            gamma,
            n0,
            batch_scale: 1.0,
        };
        s.validate()?;
        Ok(s)
    }

    /// Median and MCM default: `c = 1`, `γ = 0.75`.
    pub fn location_default() -> Self {
        Self {
            c_gamma: 1.0,
            gamma: 0.75,
            n0: 0,
            batch_scale: 1.0,
        }
    }

    /// Robbins–Monro and distance-median default: `c = 1`, `γ = 0.66`.
    pub fn slow_default() -> Self {
        Self {
            c_gamma: 1.0,
            gamma: 0.66,
            n0: 0,
            batch_scale: 1.0,
        }
    }

    /// The same schedule with `batch_scale = √s`.
    pub fn for_batch(self, s: usize) -> Self {
        Self {
            batch_scale: (s as f64).sqrt(),
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_gamma > 0.0 && self.c_gamma.is_finite()) {
            return Err(invalid(format!("step constant c_gamma = {} must be positive", self.c_gamma)));
        }
        if !(self.gamma > 0.5 && self.gamma < 1.0) {
            return Err(invalid(format!("step exponent gamma = {} outside (0.5, 1)", self.gamma)));
        }
        if !(self.batch_scale > 0.0 && self.batch_scale.is_finite()) {
            return Err(invalid("batch scale must be positive"));
        }
        Ok(())
    }

    /// Step for the `n`-th update, `n ≥ 1`.
    pub fn step(&self, n: u64) -> f64 {
        debug_assert!(n >= 1);
        self.batch_scale * self.c_gamma * ((n + self.n0) as f64).powf(-self.gamma)
    }
}
