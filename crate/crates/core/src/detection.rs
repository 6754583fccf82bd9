//! Scaled Mahalanobis distances and outlier verdicts.
//!
//! A raw distance `D̂` is rescaled to `D̃ = χ²_d(0.5) / med · D̂`, where `med`
//! tracks the running median of past raw distances, and flagged when
//! `D̃ > χ²_d(1 − α)`. The running median is a stochastic-gradient quantile
//! tracker: `med ← med − γ (1{D̂ ≤ med} − 1/2)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::chi2_quantile;
use crate::step::StepSchedule;

/// Per-observation verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    /// Zero-based position in the stream.
    pub index: u64,
    pub raw_distance: f64,
    pub scaled_distance: f64,
    pub threshold: f64,
    pub is_outlier: bool,
    /// Ground truth, when the data source provides it.
    pub truth: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceScaler {
    /// Current running median of raw distances.
    pub median: f64,
    pub step: StepSchedule,
    /// Median updates applied, counting the initialisation window.
    pub n: u64,
    /// `χ²_d(0.5)`.
    pub reference_median: f64,
    /// `χ²_d(1 − α)`.
    pub threshold: f64,
}

impl DistanceScaler {
    /// `initial` raw distances seed the running median with their empirical
    /// median; the step counter starts at their count.
    pub fn new(d: usize, alpha: f64, step: StepSchedule, initial: &[f64]) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid(format!("detection level alpha = {alpha} outside (0, 1)")));
        }
        step.validate()?;
        let reference_median = chi2_quantile(d, 0.5)?;
        let threshold = chi2_quantile(d, 1.0 - alpha)?;
        let median = if initial.is_empty() {
            reference_median
        } else {
            empirical_median(initial)
        };
        Ok(Self {
            median: median.max(Self::floor(reference_median)),
            step,
            n: initial.len() as u64,
            reference_median,
            threshold,
        })
    }

    fn floor(reference_median: f64) -> f64 {
        1e-12 * reference_median
    }

    /// Scores `raw` against the current median without updating it.
    pub fn score(&self, index: u64, raw: f64) -> DetectionRecord {
        let scaled = self.reference_median / self.median * raw;
        DetectionRecord {
            index,
            raw_distance: raw,
            scaled_distance: scaled,
            threshold: self.threshold,
            is_outlier: scaled > self.threshold,
            truth: None,
        }
    }

    /// Moves the running median one step using `raw`.
    pub fn observe(&mut self, raw: f64) {
        let gamma = self.step.step(self.n + 1);
        let indicator = if raw <= self.median { 1.0 } else { 0.0 };
        self.median = (self.median - gamma * (indicator - 0.5)).max(Self::floor(self.reference_median));
        self.n += 1;
    }

    /// Scores `raw`, then lets it update the median.
    pub fn process(&mut self, index: u64, raw: f64) -> DetectionRecord {
        let record = self.score(index, raw);
        self.observe(raw);
        record
    }
}

/// Median of a non-empty slice (mean of the two middle values for even length).
pub fn empirical_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
