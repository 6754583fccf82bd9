//! Geometric median: offline Weiszfeld iteration and the averaged stochastic
//! gradient recursion for streams.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::numerics::matrix::norm;
use crate::step::StepSchedule;

/// Points closer than this to the current iterate are dropped from a
/// Weiszfeld sum, and stochastic gradients shorter than this are skipped.
pub const COINCIDENCE_THRESHOLD: f64 = 1e-12;

/// Offline geometric median of `points` by Weiszfeld's fixed-point iteration.
///
/// Starts from the coordinate-wise mean and stops when the move is at most
/// `tol · (1 + ‖m‖)` or after `max_iter` iterations. If the iterate lands on
/// a data point that point is excluded from the weights; if that point is
/// itself optimal (the pull of the others does not exceed its unit weight)
/// the iteration stops there.
pub fn weiszfeld_median(points: &[Vec<f64>], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let d = check_points(points)?;
    let n = points.len() as f64;
    let mut m = vec![0.0; d];
    for x in points {
        for (mi, xi) in m.iter_mut().zip(x) {
            *mi += xi / n;
        }
    }

    let mut next = vec![0.0; d];
    let mut pull = vec![0.0; d];
    for _ in 0..max_iter {
        next.iter_mut().for_each(|v| *v = 0.0);
        pull.iter_mut().for_each(|v| *v = 0.0);
        let mut weight = 0.0;
        let mut coincident = 0usize;
        for x in points {
            let dist = euclid(x, &m);
            if dist < COINCIDENCE_THRESHOLD {
                coincident += 1;
                continue;
            }
            let w = 1.0 / dist;
            weight += w;
            for ((nv, pv), (xi, mi)) in next.iter_mut().zip(pull.iter_mut()).zip(x.iter().zip(&m)) {
                *nv += w * xi;
                *pv += w * (xi - mi);
            }
        }
        if weight == 0.0 {
            // Every point coincides with the iterate.
            return Ok(m);
        }
        if coincident > 0 && norm(&pull) <= coincident as f64 {
            return Ok(m);
        }
        for v in next.iter_mut() {
            *v /= weight;
        }
        let step = euclid(&next, &m);
        std::mem::swap(&mut m, &mut next);
        if step <= tol * (1.0 + norm(&m)) {
            break;
        }
    }
    Ok(snap_to_optimal_point(points, m))
}

/// Weiszfeld approaches a median sitting on a data point only sublinearly.
/// If the nearest data point satisfies the optimality condition, return it.
fn snap_to_optimal_point(points: &[Vec<f64>], m: Vec<f64>) -> Vec<f64> {
    let nearest = points
        .iter()
        .min_by(|a, b| euclid(a, &m).total_cmp(&euclid(b, &m)))
        .expect("points checked non-empty");
    let mut pull = vec![0.0; m.len()];
    let mut coincident = 0usize;
    for x in points {
        let dist = euclid(x, nearest);
        if dist < COINCIDENCE_THRESHOLD {
            coincident += 1;
            continue;
        }
        for ((p, xi), ci) in pull.iter_mut().zip(x).zip(nearest) {
            *p += (xi - ci) / dist;
        }
    }
    if norm(&pull) <= coincident as f64 {
        nearest.clone()
    } else {
        m
    }
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let first = points.first().ok_or_else(|| invalid("no observations"))?;
    let d = first.len();
    if d == 0 {
        return Err(invalid("observations have dimension 0"));
    }
    for (index, x) in points.iter().enumerate() {
        check_dim(d, x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(crate::Error::NonFinite { index });
        }
    }
    Ok(d)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Online geometric median: the SGD iterate `m` and its running average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianState {
    pub m: Vec<f64>,
    pub m_bar: Vec<f64>,
    /// Updates applied so far; the next update uses step `n + 1`.
    pub n: u64,
    pub step: StepSchedule,
}

impl MedianState {
    /// Starts both the iterate and its average at `m0`.
    pub fn new(m0: Vec<f64>, step: StepSchedule) -> Self {
        Self::with_counter(m0, step, 0)
    }

    /// Starts at `m0` with the counter already at `n`, as when `m0` was
    /// estimated from `n` earlier observations.
    pub fn with_counter(m0: Vec<f64>, step: StepSchedule, n: u64) -> Self {
        Self {
            m_bar: m0.clone(),
            m: m0,
            n,
            step,
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// `m ← m + γ (x − m)/‖x − m‖`, then `m̄ ← m̄ + (m − m̄)/(n + 2)`.
    pub fn update(&mut self, x: &[f64]) -> Result<()> {
        self.update_block(&[x])
    }

    /// Mini-batch step: the unit gradients of the block members, averaged,
    /// all taken at the block-start iterate.
    pub fn update_block<X: AsRef<[f64]>>(&mut self, block: &[X]) -> Result<()> {
        if block.is_empty() {
            return Err(invalid("empty block"));
        }
        let d = self.dim();
        for x in block {
            check_dim(d, x.as_ref().len())?;
        }
        let gamma = self.step.step(self.n + 1);
        let mut dir = vec![0.0; d];
        for x in block {
            let x = x.as_ref();
            let dist = euclid(x, &self.m);
            if dist < COINCIDENCE_THRESHOLD {
                continue;
            }
            for ((g, xi), mi) in dir.iter_mut().zip(x).zip(&self.m) {
                *g += (xi - mi) / dist;
            }
        }
        let scale = gamma / block.len() as f64;
        for (mi, g) in self.m.iter_mut().zip(&dir) {
            *mi += scale * g;
        }
        self.advance_average();
        Ok(())
    }

    fn advance_average(&mut self) {
        let w = 1.0 / (self.n as f64 + 2.0);
        for (b, mi) in self.m_bar.iter_mut().zip(&self.m) {
            *b += w * (mi - *b);
        }
        self.n += 1;
    }
}
