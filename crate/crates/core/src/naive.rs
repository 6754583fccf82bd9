//! Non-robust baseline: running sample mean and covariance with the inverse
//! maintained by Sherman–Morrison, scored with the same scaled-distance rule
//! as the robust estimator.
//!
//! The covariance uses the population denominator `n`, for which the
//! one-observation update is an exact rank-one change:
//!
//! ```text
//! u = x − X̄_n
//! X̄_{n+1} = X̄_n + u / (n + 1)
//! Σ_{n+1} = n/(n+1) · Σ_n + n/(n+1)² · u uᵀ
//! ```

use serde::{Deserialize, Serialize};

use crate::detection::{DetectionRecord, DistanceScaler};
use crate::error::{check_dim, invalid, Error, Result};
use crate::numerics::{Cholesky, SymMatrix};
use crate::pipeline::{check_finite, check_window, read_snapshot, write_snapshot};
use crate::step::StepSchedule;

/// Below this Sherman–Morrison denominator the inverse is refactorised.
pub const SM_DENOMINATOR_FLOOR: f64 = 1e-12;

const SNAPSHOT_FORMAT: &str = "streamcov.naive";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveState {
    pub mean: Vec<f64>,
    pub cov: SymMatrix,
    pub cov_inv: SymMatrix,
    pub n_obs: u64,
    pub alpha: f64,
    pub scaler: DistanceScaler,
    /// Times the inverse had to be recomputed from scratch.
    pub fallbacks: u64,
}

/// Two-pass mean and population covariance.
pub fn batch_mean_cov(xs: &[Vec<f64>]) -> (Vec<f64>, SymMatrix) {
    let d = xs[0].len();
    let n = xs.len() as f64;
    let mut mean = vec![0.0; d];
    for x in xs {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = SymMatrix::zeros(d);
    {
        let c = cov.as_mut_slice();
        for x in xs {
            for i in 0..d {
                let ui = x[i] - mean[i];
                for j in i..d {
                    c[i * d + j] += ui * (x[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = c[i * d + j] / n;
                c[i * d + j] = v;
                c[j * d + i] = v;
            }
        }
    }
    (mean, cov)
}

fn quad(inv: &SymMatrix, x: &[f64], m: &[f64]) -> f64 {
    let diff: Vec<f64> = x.iter().zip(m).map(|(a, b)| a - b).collect();
    inv.quad_form(&diff)
}

impl NaiveState {
    /// Exact statistics of `window`, plus verdicts for the window itself.
    pub fn initialize(
        window: &[Vec<f64>],
        alpha: f64,
        distance_step: StepSchedule,
    ) -> Result<(Self, Vec<DetectionRecord>)> {
        let d = check_window(window)?;
        let (mean, cov) = batch_mean_cov(window);
        let cov_inv = Cholesky::new(&cov)
            .map_err(|_| Error::Singular)?
            .inverse();
        if !cov_inv.is_finite() {
            return Err(Error::Singular);
        }
        let raws: Vec<f64> = window.iter().map(|x| quad(&cov_inv, x, &mean)).collect();
        let scaler = DistanceScaler::new(d, alpha, distance_step, &raws)?;
        let records = raws
            .iter()
            .enumerate()
            .map(|(i, &r)| scaler.score(i as u64, r))
            .collect();
        Ok((
            Self {
                mean,
                cov,
                cov_inv,
                n_obs: window.len() as u64,
                alpha,
                scaler,
                fallbacks: 0,
            },
            records,
        ))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, x: &[f64]) -> Result<DetectionRecord> {
        let d = self.dim();
        check_dim(d, x.len())?;
        check_finite(x, self.n_obs)?;
        let n = self.n_obs as f64;
        let u: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        for (m, ui) in self.mean.iter_mut().zip(&u) {
            *m += ui / (n + 1.0);
        }

        let shrink = n / (n + 1.0);
        let c = n / ((n + 1.0) * (n + 1.0));
        {
            let cov = self.cov.as_mut_slice();
            for i in 0..d {
                for j in i..d {
                    let v = shrink * cov[i * d + j] + c * u[i] * u[j];
                    cov[i * d + j] = v;
                    cov[j * d + i] = v;
                }
            }
        }

        // (B + c u uᵀ)⁻¹ with B = shrink · Σ_n, so B⁻¹ = Σ_n⁻¹ / shrink.
        let b_inv = self.cov_inv.scaled(1.0 / shrink);
        let w = b_inv.mul_vec(&u);
        let denom = 1.0 + c * crate::numerics::matrix::dot(&u, &w);
        let mut refactor = !(denom.abs() >= SM_DENOMINATOR_FLOOR && denom.is_finite());
        if !refactor {
            let mut inv = b_inv;
            let k = c / denom;
            {
                let e = inv.as_mut_slice();
                for i in 0..d {
                    for j in i..d {
                        let v = e[i * d + j] - k * w[i] * w[j];
                        e[i * d + j] = v;
                        e[j * d + i] = v;
                    }
                }
            }
            if inv.is_finite() {
                self.cov_inv = inv;
            } else {
                refactor = true;
            }
        }
        if refactor {
            self.fallbacks += 1;
            if let Ok(ch) = Cholesky::new(&self.cov) {
                self.cov_inv = ch.inverse();
            }
        }

        let raw = quad(&self.cov_inv, x, &self.mean);
        let record = self.scaler.process(self.n_obs, raw);
        self.n_obs += 1;
        Ok(record)
    }

    pub fn process<X: AsRef<[f64]>>(&mut self, xs: &[X]) -> Result<Vec<DetectionRecord>> {
        xs.iter().map(|x| self.update(x.as_ref())).collect()
    }

    pub fn covariance(&self) -> &SymMatrix {
        &self.cov
    }

    pub fn log10_determinant(&self) -> f64 {
        match Cholesky::new(&self.cov) {
            Ok(ch) => ch.log_det() / std::f64::consts::LN_10,
            Err(_) => f64::NEG_INFINITY,
        }
    }

    pub fn mahalanobis(&self, x: &[f64]) -> f64 {
        quad(&self.cov_inv, x, &self.mean)
    }

    pub fn to_snapshot(&self) -> Result<String> {
        write_snapshot(SNAPSHOT_FORMAT, self)
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let s: Self = read_snapshot(SNAPSHOT_FORMAT, text)?;
        if s.cov.dim() != s.mean.len() || s.cov_inv.dim() != s.mean.len() {
            return Err(invalid("snapshot dimensions disagree"));
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn random_points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = RngStream::new(seed);
        (0..n)
            .map(|i| {
                (0..d)
                    .map(|k| rng.standard_normal() * (1.0 + k as f64) + (i % 7) as f64 * 0.1)
                    .collect()
            })
            .collect()
    }

    fn rel_frob(a: &SymMatrix, b: &SymMatrix) -> f64 {
        a.frobenius_distance(b) / b.frobenius_norm()
    }

    #[test]
    fn two_point_hand_computation() {
        let (m, c) = batch_mean_cov(&[vec![0.0], vec![2.0]]);
        assert_eq!(m, vec![1.0]);
        assert_eq!(c.get(0, 0), 1.0);
    }

    #[test]
    fn equal_window_is_singular() {
        let w = vec![vec![1.0, 2.0]; 10];
        assert_eq!(
            NaiveState::initialize(&w, 0.05, StepSchedule::slow_default()).unwrap_err(),
            Error::Singular
        );
    }

    #[test]
    fn initial_inverse_is_inverse() {
        let w = random_points(100, 10, 1);
        let (s, _) = NaiveState::initialize(&w, 0.05, StepSchedule::slow_default()).unwrap();
        let prod = s.cov.as_matrix().matmul(s.cov_inv.as_matrix());
        let id = crate::numerics::Matrix::identity(10);
        for (p, e) in prod.as_slice().iter().zip(id.as_slice()) {
            assert!((p - e).abs() < 1e-8);
        }
    }

    #[test]
    fn streaming_equals_two_pass() {
        let all = random_points(1000, 5, 2);
        let (mut s, _) = NaiveState::initialize(&all[..20], 0.05, StepSchedule::slow_default()).unwrap();
        for k in 20..all.len() {
            s.update(&all[k]).unwrap();
            if k % 97 == 0 || k == all.len() - 1 {
                let (m, c) = batch_mean_cov(&all[..=k]);
                assert!(rel_frob(&s.cov, &c) < 1e-8);
                for (a, b) in s.mean.iter().zip(&m) {
                    assert!((a - b).abs() < 1e-10);
                }
                let direct = Cholesky::new(&s.cov).unwrap().inverse();
                assert!(rel_frob(&s.cov_inv, &direct) < 1e-6);
            }
        }
        assert_eq!(s.fallbacks, 0);
    }

    #[test]
    fn constant_stream_collapses_covariance() {
        let w = random_points(20, 2, 3);
        let (mut s, _) = NaiveState::initialize(&w, 0.05, StepSchedule::slow_default()).unwrap();
        let c = [0.5, -0.5];
        for _ in 0..5000 {
            s.update(&c).unwrap();
        }
        assert!((s.mean[0] - 0.5).abs() < 0.01);
        assert!(s.cov.frobenius_norm() < 0.05);
        assert!(s.cov_inv.is_finite());
    }

    #[test]
    fn single_outlier_blows_up_covariance() {
        let mut rng = RngStream::new(4);
        let w: Vec<Vec<f64>> = (0..1000)
            .map(|_| (0..10).map(|_| rng.standard_normal()).collect())
            .collect();
        let (mut s, _) = NaiveState::initialize(&w, 0.05, StepSchedule::slow_default()).unwrap();
        let before = s.cov.frobenius_norm();
        let mut x = vec![0.0; 10];
        x[0] = 1e3;
        s.update(&x).unwrap();
        assert!(s.cov.frobenius_norm() >= 10.0 * before);
    }

    #[test]
    fn snapshot_round_trip() {
        let w = random_points(30, 3, 5);
        let (mut a, _) = NaiveState::initialize(&w, 0.05, StepSchedule::slow_default()).unwrap();
        let text = a.to_snapshot().unwrap();
        let mut b = NaiveState::from_snapshot(&text).unwrap();
        assert_eq!(a, b);
        let x = [0.3, 1.0, -2.0];
        assert_eq!(a.update(&x).unwrap(), b.update(&x).unwrap());
    }
}
