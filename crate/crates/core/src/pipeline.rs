//! The robust online estimator.
//!
//! Each observation (or block, in streaming mode) runs the cascade
//!
//! 1. geometric-median step, `m̄`;
//! 2. MCM step centred at the previous `m̄`, `V̄`;
//! 3. eigendecomposition `V̄ = P diag(δ) Pᵀ`;
//! 4. Robbins–Monro refinement of `λ` from `δ`;
//! 5. Mahalanobis distance `D̂ = Σ_j ⟨x − m̄, P_j⟩² / λ̄_j`, scaled and judged;
//! 6. running-median update of the distances.
//!
//! The covariance estimate is `P diag(λ̄) Pᵀ`.

use serde::{Deserialize, Serialize};

use crate::detection::{DetectionRecord, DistanceScaler};
use crate::error::{check_dim, invalid, Error, Result};
use crate::geom_median::{weiszfeld_median, MedianState};
use crate::mcm::{weiszfeld_mcm, McmState};
use crate::numerics::{sym_eigen, sym_eigen_warm, EigenSystem, RngStream, SymMatrix};
use crate::spectral::{eps_floor, RmState};
use crate::step::StepSchedule;

/// How observations are consumed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Mode {
    /// One update and one eigendecomposition per observation.
    Online,
    /// One update and one eigendecomposition per block of `batch`.
    Streaming { batch: usize },
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Online => "online",
            Mode::Streaming { .. } => "streaming",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustConfig {
    pub mode: Mode,
    /// Detection level; the threshold is `χ²_d(1 − alpha)`.
    pub alpha: f64,
    /// Robbins–Monro iterations per update.
    pub n_mc: u64,
    /// Exponent of the log weights averaging the Robbins–Monro iterates.
    pub omega: f64,
    pub median_step: StepSchedule,
    pub mcm_step: StepSchedule,
    pub rm_step: StepSchedule,
    pub distance_step: StepSchedule,
    /// Relative tolerance and iteration cap of the offline initialisation.
    pub weiszfeld_tol: f64,
    pub weiszfeld_max_iter: usize,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Online,
            alpha: 0.05,
            n_mc: 10,
            omega: 2.0,
            median_step: StepSchedule::location_default(),
            mcm_step: StepSchedule::location_default(),
            rm_step: StepSchedule::slow_default(),
            distance_step: StepSchedule::slow_default(),
            weiszfeld_tol: 1e-10,
            weiszfeld_max_iter: 1000,
        }
    }
}

impl RobustConfig {
    pub fn validate(&self) -> Result<()> {
        if let Mode::Streaming { batch } = self.mode {
            if batch == 0 {
                return Err(invalid("streaming batch size must be at least 1"));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(format!("alpha = {} outside (0, 1)", self.alpha)));
        }
        if self.n_mc == 0 {
            return Err(invalid("n_mc must be at least 1"));
        }
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return Err(invalid("omega must be non-negative"));
        }
        if !(self.weiszfeld_tol > 0.0) || self.weiszfeld_max_iter == 0 {
            return Err(invalid("Weiszfeld tolerance and iteration cap must be positive"));
        }
        for s in [
            &self.median_step,
            &self.mcm_step,
            &self.rm_step,
            &self.distance_step,
        ] {
            s.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustState {
    pub config: RobustConfig,
    pub d: usize,
    pub median: MedianState,
    pub mcm: McmState,
    pub rm: RmState,
    /// Eigendecomposition of the current `V̄`.
    pub eig: EigenSystem,
    pub scaler: DistanceScaler,
    /// Observations consumed, including the initialisation window.
    pub n_obs: u64,
    /// Eigendecompositions performed so far.
    pub eigen_count: u64,
    /// Drives the Robbins–Monro draws.
    pub rng: RngStream,
}

const SNAPSHOT_FORMAT: &str = "streamcov.robust";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    state: T,
}

pub(crate) fn write_snapshot<T: Serialize>(format: &str, state: &T) -> Result<String> {
    serde_json::to_string_pretty(&Envelope {
        format: format.to_string(),
        version: SNAPSHOT_VERSION,
        state,
    })
    .map_err(|e| Error::Snapshot(e.to_string()))
}

pub(crate) fn read_snapshot<T: for<'de> Deserialize<'de>>(format: &str, text: &str) -> Result<T> {
    let env: Envelope<T> = serde_json::from_str(text).map_err(|e| Error::Snapshot(e.to_string()))?;
    if env.format != format {
        return Err(Error::Snapshot(format!(
            "expected a {format} snapshot, found {}",
            env.format
        )));
    }
    if env.version != SNAPSHOT_VERSION {
        return Err(Error::Snapshot(format!("unsupported version {}", env.version)));
    }
    Ok(env.state)
}

pub(crate) fn check_window(window: &[Vec<f64>]) -> Result<usize> {
    let d = window.first().map(|x| x.len()).unwrap_or(0);
    if d == 0 {
        return Err(invalid("initialisation window is empty"));
    }
    if window.len() < d + 1 {
        return Err(invalid(format!(
            "initialisation window has {} observations, need at least d + 1 = {}",
            window.len(),
            d + 1
        )));
    }
    for (index, x) in window.iter().enumerate() {
        check_dim(d, x.len())?;
        check_finite(x, index as u64)?;
    }
    Ok(d)
}

pub(crate) fn check_finite(x: &[f64], index: u64) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            index: index as usize,
        })
    }
}

fn clamped_spectrum(eig: &EigenSystem) -> Vec<f64> {
    eig.values.iter().map(|v| v.max(0.0)).collect()
}

impl RobustState {
    /// Fits the offline estimators on `window` and returns the state along
    /// with verdicts for the window itself, scored with the fitted parameters.
    pub fn initialize(
        window: &[Vec<f64>],
        config: RobustConfig,
        mut rng: RngStream,
    ) -> Result<(Self, Vec<DetectionRecord>)> {
        config.validate()?;
        let d = check_window(window)?;
        let n_init = window.len() as u64;

        let m = weiszfeld_median(window, config.weiszfeld_tol, config.weiszfeld_max_iter)?;
        let v = weiszfeld_mcm(window, &m, config.weiszfeld_tol, config.weiszfeld_max_iter)?;
        let eig = sym_eigen(&v)?;
        let delta = clamped_spectrum(&eig);
        let floor = eps_floor(&delta);
        let lambda0: Vec<f64> = delta.iter().map(|v| v.max(floor)).collect();
        let mut rm = RmState::new(lambda0, config.omega, config.rm_step)?;
        rm.run(&delta, n_init * config.n_mc, &mut rng)?;

        let (median_step, mcm_step, updates_so_far) = match config.mode {
            Mode::Online => (config.median_step, config.mcm_step, n_init),
            Mode::Streaming { batch } => (
                config.median_step.for_batch(batch),
                config.mcm_step.for_batch(batch),
                n_init.div_ceil(batch as u64),
            ),
        };
        let median = MedianState::with_counter(m, median_step, updates_so_far);
        let mcm = McmState::with_counter(v, mcm_step, updates_so_far);

        let raws: Vec<f64> = window
            .iter()
            .map(|x| eigen_mahalanobis(&eig, &rm.lambda_bar, &median.m_bar, x))
            .collect();
        let scaler = DistanceScaler::new(d, config.alpha, config.distance_step, &raws)?;
        let records = raws
            .iter()
            .enumerate()
            .map(|(i, &raw)| scaler.score(i as u64, raw))
            .collect();

        Ok((
            Self {
                config,
                d,
                median,
                mcm,
                rm,
                eig,
                scaler,
                n_obs: n_init,
                eigen_count: 1,
                rng,
            },
            records,
        ))
    }

    /// Consumes one observation (online mode).
    pub fn update(&mut self, x: &[f64]) -> Result<DetectionRecord> {
        if self.config.mode != Mode::Online {
            return Err(Error::WrongMode {
                expected: "online",
                actual: self.config.mode.name(),
            });
        }
        check_dim(self.d, x.len())?;
        check_finite(x, self.n_obs)?;
        self.refresh(&[x])?;
        let raw = self.mahalanobis(x);
        let record = self.scaler.process(self.n_obs, raw);
        self.n_obs += 1;
        Ok(record)
    }

    /// Consumes one block (streaming mode). A final block may be shorter
    /// than the configured size.
    pub fn update_block<X: AsRef<[f64]>>(&mut self, block: &[X]) -> Result<Vec<DetectionRecord>> {
        if !matches!(self.config.mode, Mode::Streaming { .. }) {
            return Err(Error::WrongMode {
                expected: "streaming",
                actual: self.config.mode.name(),
            });
        }
        if block.is_empty() {
            return Err(invalid("empty block"));
        }
        for (i, x) in block.iter().enumerate() {
            check_dim(self.d, x.as_ref().len())?;
            check_finite(x.as_ref(), self.n_obs + i as u64)?;
        }
        self.refresh(block)?;
        let mut records = Vec::with_capacity(block.len());
        for x in block {
            let raw = self.mahalanobis(x.as_ref());
            records.push(self.scaler.process(self.n_obs, raw));
            self.n_obs += 1;
        }
        Ok(records)
    }

    /// Dispatches a batch of observations according to the mode: one update
    /// per observation online, consecutive blocks when streaming.
    pub fn process<X: AsRef<[f64]>>(&mut self, xs: &[X]) -> Result<Vec<DetectionRecord>> {
        match self.config.mode {
            Mode::Online => xs.iter().map(|x| self.update(x.as_ref())).collect(),
            Mode::Streaming { batch } => {
                let mut out = Vec::with_capacity(xs.len());
                for block in xs.chunks(batch) {
                    out.extend(self.update_block(block)?);
                }
                Ok(out)
            }
        }
    }

    /// Estimator steps 1–4 for an observation or block.
    fn refresh<X: AsRef<[f64]>>(&mut self, block: &[X]) -> Result<()> {
        let m_bar_prev = self.median.m_bar.clone();
        self.median.update_block(block)?;
        self.mcm.update_block(block, &m_bar_prev)?;
        self.eig = sym_eigen_warm(&self.mcm.v_bar, &self.eig)?;
        self.eigen_count += 1;
        let delta = clamped_spectrum(&self.eig);
        self.rm.advance_to(self.n_obs * self.config.n_mc);
        self.rm.run(&delta, self.config.n_mc, &mut self.rng)
    }

    /// Raw Mahalanobis distance of `x` under the current estimates.
    pub fn mahalanobis(&self, x: &[f64]) -> f64 {
        eigen_mahalanobis(&self.eig, &self.rm.lambda_bar, &self.median.m_bar, x)
    }

    /// `P diag(λ̄) Pᵀ`.
    pub fn covariance(&self) -> SymMatrix {
        self.eig.reconstruct(&self.rm.lambda_bar)
    }

    /// `Π λ̄_j`, the determinant of [`Self::covariance`].
    pub fn determinant(&self) -> f64 {
        self.rm.lambda_bar.iter().product()
    }

    pub fn log10_determinant(&self) -> f64 {
        self.rm.lambda_bar.iter().map(|v| v.log10()).sum()
    }

    pub fn location(&self) -> &[f64] {
        &self.median.m_bar
    }

    pub fn to_snapshot(&self) -> Result<String> {
        write_snapshot(SNAPSHOT_FORMAT, self)
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let state: Self = read_snapshot(SNAPSHOT_FORMAT, text)?;
        state.config.validate()?;
        Ok(state)
    }
}

/// `Σ_j ⟨x − m, P_j⟩² / λ_j`.
pub fn eigen_mahalanobis(eig: &EigenSystem, lambda: &[f64], m: &[f64], x: &[f64]) -> f64 {
    let centered: Vec<f64> = x.iter().zip(m).map(|(a, b)| a - b).collect();
    eig.project(&centered)
        .iter()
        .zip(lambda)
        .map(|(c, l)| c * c / l)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{toeplitz, Cholesky, Matrix, MvnSampler};

    fn gaussian_window(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let sigma = toeplitz(d, 0.3).unwrap();
        let s = MvnSampler::new(vec![0.0; d], &sigma).unwrap();
        let mut rng = RngStream::new(seed);
        (0..n).map(|_| s.sample(&mut rng)).collect()
    }

    #[test]
    fn window_checks() {
        let cfg = RobustConfig::default();
        let short = gaussian_window(3, 3, 1);
        assert!(RobustState::initialize(&short, cfg.clone(), RngStream::new(1)).is_err());
        let mut bad = gaussian_window(10, 3, 1);
        bad[4][1] = f64::INFINITY;
        assert_eq!(
            RobustState::initialize(&bad, cfg, RngStream::new(1)).unwrap_err(),
            Error::NonFinite { index: 4 }
        );
    }

    #[test]
    fn constant_column_engages_floor() {
        let mut w = gaussian_window(60, 3, 2);
        for x in w.iter_mut() {
            x.push(1.0);
        }
        let (mut s, _) = RobustState::initialize(&w, RobustConfig::default(), RngStream::new(2)).unwrap();
        assert!(s.rm.lambda_bar.iter().all(|l| *l > 0.0));
        let r = s.update(&[0.1, 0.2, -0.1, 1.0]).unwrap();
        assert!(r.raw_distance.is_finite());
    }

    #[test]
    fn permutation_invariant_initialisation() {
        let w = gaussian_window(50, 3, 3);
        let mut rev = w.clone();
        rev.reverse();
        let cfg = RobustConfig::default();
        let (a, _) = RobustState::initialize(&w, cfg.clone(), RngStream::new(3)).unwrap();
        let (b, _) = RobustState::initialize(&rev, cfg, RngStream::new(3)).unwrap();
        for (x, y) in a.median.m.iter().zip(&b.median.m) {
            assert!((x - y).abs() < 1e-9);
        }
        assert!(a.mcm.v.frobenius_distance(&b.mcm.v) < 1e-9);
    }

    #[test]
    fn zero_distance_at_location() {
        let w = gaussian_window(40, 3, 4);
        let (s, _) = RobustState::initialize(&w, RobustConfig::default(), RngStream::new(4)).unwrap();
        assert_eq!(s.mahalanobis(&s.median.m_bar.clone()), 0.0);
    }

    #[test]
    fn identity_setup_scores_squared_norm() {
        let d = 3;
        let eig = sym_eigen(&SymMatrix::identity(d)).unwrap();
        let x = [1.0, -2.0, 0.5];
        let raw = eigen_mahalanobis(&eig, &[1.0; 3], &[0.0; 3], &x);
        assert!((raw - 5.25).abs() < 1e-15);
        let scaler = DistanceScaler::new(d, 0.05, StepSchedule::slow_default(), &[]).unwrap();
        let r = scaler.score(0, raw);
        assert!((r.scaled_distance - 5.25).abs() < 1e-14);
    }

    #[test]
    fn eigen_form_matches_solve() {
        let mut rng = RngStream::new(5);
        for trial in 0..100 {
            let d = 2 + trial % 6;
            let a = Matrix::from_fn(d, |_, _| rng.standard_normal());
            let sigma = SymMatrix::new(a.matmul(&a.transpose())).add_scaled(&SymMatrix::identity(d), 0.1);
            let eig = sym_eigen(&sigma).unwrap();
            let m: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
            let x: Vec<f64> = (0..d).map(|_| 3.0 * rng.standard_normal()).collect();
            let fast = eigen_mahalanobis(&eig, &eig.values, &m, &x);
            let diff: Vec<f64> = x.iter().zip(&m).map(|(a, b)| a - b).collect();
            let slow = Cholesky::new(&sigma).unwrap().inv_quad_form(&diff);
            assert!((fast - slow).abs() <= 1e-8 * slow.abs().max(1.0), "{fast} vs {slow}");
        }
    }

    #[test]
    fn covariance_and_determinant_agree() {
        let w = gaussian_window(100, 4, 6);
        let (mut s, _) = RobustState::initialize(&w, RobustConfig::default(), RngStream::new(6)).unwrap();
        for x in gaussian_window(200, 4, 7) {
            s.update(&x).unwrap();
        }
        let cov = s.covariance();
        let det = Cholesky::new(&cov).unwrap().log_det().exp();
        assert!((det / s.determinant() - 1.0).abs() < 1e-8);
        assert_eq!(s.eigen_count, 201);
    }

    #[test]
    fn mode_enforced() {
        let w = gaussian_window(30, 2, 8);
        let (mut s, _) = RobustState::initialize(&w, RobustConfig::default(), RngStream::new(8)).unwrap();
        assert!(matches!(s.update_block(&w[..2]), Err(Error::WrongMode { .. })));
        let before = s.clone();
        assert!(s.update(&[f64::NAN, 0.0]).is_err());
        assert_eq!(s, before);
    }

    #[test]
    fn streaming_batch_one_matches_online() {
        let w = gaussian_window(30, 3, 9);
        let online = RobustConfig::default();
        let streaming = RobustConfig {
            mode: Mode::Streaming { batch: 1 },
            ..online.clone()
        };
        let (mut a, ra) = RobustState::initialize(&w, online, RngStream::new(9)).unwrap();
        let (mut b, rb) = RobustState::initialize(&w, streaming, RngStream::new(9)).unwrap();
        assert_eq!(ra, rb);
        let xs = gaussian_window(100, 3, 10);
        let ra = a.process(&xs).unwrap();
        let rb = b.process(&xs).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.covariance(), b.covariance());
    }

    #[test]
    fn block_of_copies_at_location_is_inlier() {
        let w = gaussian_window(40, 3, 11);
        let cfg = RobustConfig {
            mode: Mode::Streaming { batch: 10 },
            ..RobustConfig::default()
        };
        let (mut s, _) = RobustState::initialize(&w, cfg, RngStream::new(11)).unwrap();
        // With every member at m̄ the location stays put and all distances vanish.
        let block = vec![s.median.m.clone(); 10];
        s.median.m_bar = s.median.m.clone();
        let recs = s.update_block(&block).unwrap();
        for r in recs {
            assert_eq!(r.raw_distance, 0.0);
            assert!(!r.is_outlier);
        }
    }

    #[test]
    fn snapshot_resume_is_bit_identical() {
        let w = gaussian_window(50, 3, 12);
        let (mut a, _) = RobustState::initialize(&w, RobustConfig::default(), RngStream::new(12)).unwrap();
        let xs = gaussian_window(60, 3, 13);
        a.process(&xs[..30]).unwrap();
        let text = a.to_snapshot().unwrap();
        let mut b = RobustState::from_snapshot(&text).unwrap();
        assert_eq!(a, b);
        let ra = a.process(&xs[30..]).unwrap();
        let rb = b.process(&xs[30..]).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
        assert!(RobustState::from_snapshot("{}").is_err());
    }
}
