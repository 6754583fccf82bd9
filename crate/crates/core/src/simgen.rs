//! Contaminated Gaussian streams for simulation studies.
//!
//! Observations come from the mixture `(1 − r) F₀ + r F₁` with
//!
//! * `F₀ = N(0, Σ₀)`, `Σ₀ = D₀ T(ρ₀) D₀`, `D₀ = diag(σ₀ᵢ)`, `σ²₀ᵢ = 2i/(d+1)`;
//! * `F₁ = N(k·u, ℓ·D₀ T(ρ₁) D₀)`, `u = m₁/√d`, `m₁ = ((−1)¹, …, (−1)^d)`;
//!
//! where `T(ρ)` is the AR(1) correlation matrix. `k`, `ℓ` and `ρ₁` control
//! the mean shift, variance inflation and shape change of the outliers, and
//! can be calibrated to a target Kullback–Leibler divergence `KL(F₀ ‖ F₁)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::numerics::matrix::dot;
use crate::numerics::{toeplitz, Cholesky, MvnSampler, RngStream, SymMatrix};

pub const DEFAULT_RHO0: f64 = 0.3;

/// Variances `σ²₀ᵢ = 2i/(d+1)`, `i = 1..d`.
pub fn reference_variances(d: usize) -> Vec<f64> {
    (1..=d).map(|i| 2.0 * i as f64 / (d as f64 + 1.0)).collect()
}

/// `D₀ T(ρ) D₀`.
pub fn scaled_toeplitz(d: usize, rho: f64) -> Result<SymMatrix> {
    let sd: Vec<f64> = reference_variances(d).iter().map(|v| v.sqrt()).collect();
    let t = toeplitz(d, rho)?;
    Ok(SymMatrix::from_fn(d, |i, j| sd[i] * t.get(i, j) * sd[j]))
}

/// `(μ₀, Σ₀)` with the default `ρ₀ = 0.3`.
pub fn build_reference(d: usize) -> Result<(Vec<f64>, SymMatrix)> {
    if d == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    Ok((vec![0.0; d], scaled_toeplitz(d, DEFAULT_RHO0)?))
}

/// Unit mean-shift direction `m₁/√d` with `m₁ᵢ = (−1)^i`, `i = 1..d`.
pub fn shift_direction(d: usize) -> Vec<f64> {
    let s = 1.0 / (d as f64).sqrt();
    (1..=d).map(|i| if i % 2 == 1 { -s } else { s }).collect()
}

/// `KL(N(μ_a, Σ_a) ‖ N(μ_b, Σ_b))`.
pub fn kl_gaussians(mu_a: &[f64], sigma_a: &SymMatrix, mu_b: &[f64], sigma_b: &SymMatrix) -> Result<f64> {
    let d = sigma_a.dim();
    check_dim(d, sigma_b.dim())?;
    check_dim(d, mu_a.len())?;
    check_dim(d, mu_b.len())?;
    let ca = Cholesky::new(sigma_a)?;
    let cb = Cholesky::new(sigma_b)?;
    // tr(Σ_b⁻¹ Σ_a) = ‖L_b⁻¹ L_a‖_F²
    let la = ca.lower();
    let mut trace = 0.0;
    for j in 0..d {
        let col = la.column(j);
        let z = cb.forward(&col);
        trace += dot(&z, &z);
    }
    let diff: Vec<f64> = mu_b.iter().zip(mu_a).map(|(b, a)| b - a).collect();
    let maha = cb.inv_quad_form(&diff);
    let kl = 0.5 * (trace - d as f64 + maha + cb.log_det() - ca.log_det());
    Ok(kl.max(0.0))
}

/// Mixture definition. The derived moments are computed on demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioParams {
    pub d: usize,
    /// Contamination rate.
    pub r: f64,
    /// Mean-shift magnitude.
    pub k: f64,
    /// Variance scale.
    pub l: f64,
    /// Outlier correlation.
    pub rho1: f64,
    #[serde(default = "default_rho0")]
    pub rho0: f64,
}

fn default_rho0() -> f64 {
    DEFAULT_RHO0
}

impl ScenarioParams {
    pub fn new(d: usize, r: f64, k: f64, l: f64, rho1: f64) -> Result<Self> {
        let p = Self {
            d,
            r,
            k,
            l,
            rho1,
            rho0: DEFAULT_RHO0,
        };
        p.validate()?;
        Ok(p)
    }

    /// Parameters under which `F₁ = F₀`.
    pub fn neutral(d: usize, r: f64) -> Result<Self> {
        Self::new(d, r, 0.0, 1.0, DEFAULT_RHO0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(invalid("d must be at least 1"));
        }
        if !(0.0..=0.5).contains(&self.r) {
            return Err(invalid(format!("contamination rate r = {} outside [0, 0.5]", self.r)));
        }
        if !(self.k >= 0.0 && self.k.is_finite()) {
            return Err(invalid(format!("mean shift k = {} must be non-negative", self.k)));
        }
        if !(self.l >= 1.0 && self.l.is_finite()) {
            return Err(invalid(format!("variance scale l = {} must be at least 1", self.l)));
        }
        if !(self.rho0.abs() < 1.0) {
            return Err(invalid(format!("rho0 = {} outside (-1, 1)", self.rho0)));
        }
        if !(self.rho1 >= self.rho0 && self.rho1 < 1.0) {
            return Err(invalid(format!(
                "rho1 = {} outside [rho0, 1) = [{}, 1)",
                self.rho1, self.rho0
            )));
        }
        Ok(())
    }

    pub fn mu0(&self) -> Vec<f64> {
        vec![0.0; self.d]
    }

    pub fn sigma0(&self) -> SymMatrix {
        scaled_toeplitz(self.d, self.rho0).expect("validated rho0")
    }

    pub fn mu1(&self) -> Vec<f64> {
        shift_direction(self.d).iter().map(|u| self.k * u).collect()
    }

    pub fn sigma1(&self) -> SymMatrix {
        scaled_toeplitz(self.d, self.rho1)
            .expect("validated rho1")
            .scaled(self.l)
    }

    /// `KL(F₀ ‖ F₁)`.
    pub fn kl(&self) -> f64 {
        kl_gaussians(&self.mu0(), &self.sigma0(), &self.mu1(), &self.sigma1())
            .expect("validated parameters give positive definite covariances")
    }

    /// Exact mean and covariance of `(1 − ε) F₀ + ε F₁`.
    pub fn mixture_moments(&self, eps: f64) -> (Vec<f64>, SymMatrix) {
        let (m0, m1) = (self.mu0(), self.mu1());
        let mean: Vec<f64> = m0.iter().zip(&m1).map(|(a, b)| (1.0 - eps) * a + eps * b).collect();
        let shift: Vec<f64> = m1.iter().zip(&m0).map(|(b, a)| b - a).collect();
        let cov = self
            .sigma0()
            .scaled(1.0 - eps)
            .add_scaled(&self.sigma1(), eps)
            .add_scaled(&SymMatrix::outer(&shift), eps * (1.0 - eps));
        (mean, cov)
    }
}

/// The three contamination knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Knob {
    K,
    L,
    Rho1,
}

impl Knob {
    pub fn name(&self) -> &'static str {
        match self {
            Knob::K => "k",
            Knob::L => "l",
            Knob::Rho1 => "rho1",
        }
    }

    fn neutral(&self) -> f64 {
        match self {
            Knob::K => 0.0,
            Knob::L => 1.0,
            Knob::Rho1 => DEFAULT_RHO0,
        }
    }

    fn params(&self, d: usize, value: f64) -> ScenarioParams {
        let mut p = ScenarioParams::neutral(d, 0.0).expect("neutral parameters are valid");
        match self {
            Knob::K => p.k = value,
            Knob::L => p.l = value,
            Knob::Rho1 => p.rho1 = value,
        }
        p
    }
}

/// Value of `knob` (others neutral) at which `KL(F₀ ‖ F₁)` equals `target`.
///
/// The divergence increases monotonically along each knob, so the root is
/// bracketed by expanding the upper end and then bisected.
pub fn calibrate(target: f64, knob: Knob, d: usize) -> Result<f64> {
    if d == 0 {
        return Err(invalid("d must be at least 1"));
    }
    if !(target >= 0.0 && target.is_finite()) {
        return Err(Error::Unreachable {
            parameter: knob.name(),
            target,
        });
    }
    let lo0 = knob.neutral();
    if target == 0.0 {
        return Ok(lo0);
    }
    let kl_at = |v: f64| knob.params(d, v).kl();
    let mut lo = lo0;
    let mut hi = match knob {
        Knob::K => 1.0,
        Knob::L => 2.0,
        Knob::Rho1 => 0.5 * (1.0 + lo0),
    };
    let mut expansions = 0;
    while kl_at(hi) < target {
        lo = hi;
        hi = match knob {
            Knob::K | Knob::L => hi * 2.0,
            Knob::Rho1 => 0.5 * (1.0 + hi),
        };
        expansions += 1;
        if expansions > 200 || (knob == Knob::Rho1 && hi >= 1.0) || !hi.is_finite() {
            return Err(Error::Unreachable {
                parameter: knob.name(),
                target,
            });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if kl_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Combined scenarios: `(k, ℓ, ρ₁)` of increasing difficulty, A easiest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    A,
    B,
    C,
    D,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::A, Scenario::B, Scenario::C, Scenario::D];

    /// `(k, ℓ, ρ₁)`.
    pub fn knobs(&self) -> (f64, f64, f64) {
        match self {
            Scenario::A => (4.29304114557381, 401.707058123136, 0.92),
            Scenario::B => (2.71508995976001, 19.0273138400435, 0.85),
            Scenario::C => (1.91985852207782, 6.32033049490702, 0.785),
            Scenario::D => (0.858565436437754, 2.02791895958006, 0.605),
        }
    }

    /// Published combined divergences, rounded to two decimals.
    pub fn published_kl(&self) -> f64 {
        match self {
            Scenario::A => 17.79,
            Scenario::B => 8.59,
            Scenario::C => 5.75,
            Scenario::D => 1.68,
        }
    }

    pub fn params(&self, d: usize, r: f64) -> Result<ScenarioParams> {
        let (k, l, rho1) = self.knobs();
        ScenarioParams::new(d, r, k, l, rho1)
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Scenario::A),
            "B" => Ok(Scenario::B),
            "C" => Ok(Scenario::C),
            "D" => Ok(Scenario::D),
            _ => Err(invalid(format!("unknown scenario {s:?}; expected A, B, C or D"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub is_outlier: bool,
}

/// Sampler for the mixture; each draw takes one uniform for the label and
/// then `d` normals.
#[derive(Debug, Clone)]
pub struct Mixture {
    r: f64,
    inlier: MvnSampler,
    outlier: MvnSampler,
}

impl Mixture {
    pub fn new(params: &ScenarioParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            r: params.r,
            inlier: MvnSampler::new(params.mu0(), &params.sigma0())?,
            outlier: MvnSampler::new(params.mu1(), &params.sigma1())?,
        })
    }

    pub fn sample(&self, rng: &mut RngStream) -> LabeledSample {
        let is_outlier = rng.uniform() < self.r;
        let x = if is_outlier {
            self.outlier.sample(rng)
        } else {
            self.inlier.sample(rng)
        };
        LabeledSample { x, is_outlier }
    }
}

pub fn sample_stream(params: &ScenarioParams, n: usize, rng: &mut RngStream) -> Result<Vec<LabeledSample>> {
    let mix = Mixture::new(params)?;
    Ok((0..n).map(|_| mix.sample(rng)).collect())
}

/// Writes `x_1,…,x_d,label` rows with a header; labels are 0 or 1.
pub fn write_csv<W: Write>(mut out: W, samples: &[LabeledSample]) -> std::io::Result<()> {
    let d = samples.first().map(|s| s.x.len()).unwrap_or(0);
    let header: Vec<String> = (1..=d).map(|i| format!("x_{i}")).collect();
    writeln!(out, "{},label", header.join(","))?;
    let mut line = String::new();
    for s in samples {
        line.clear();
        for v in &s.x {
            line.push_str(&format!("{v},"));
        }
        line.push(if s.is_outlier { '1' } else { '0' });
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// The contamination types whose influence functions are available.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Contamination {
    MeanShift { k: f64 },
    Inflation { l: f64 },
    Shape { rho1: f64 },
}

/// First-order effect `(IF_μ, IF_Σ)` of contaminating `F₀` towards the
/// given `F₁`, i.e. the ε-derivative at 0 of the mixture's mean and
/// covariance.
pub fn influence(kind: Contamination, d: usize) -> Result<(Vec<f64>, SymMatrix)> {
    let (_, sigma0) = build_reference(d)?;
    match kind {
        Contamination::MeanShift { k } => {
            let u = shift_direction(d);
            let if_mu: Vec<f64> = u.iter().map(|v| k * v).collect();
            let if_sigma = SymMatrix::outer(&if_mu);
            Ok((if_mu, if_sigma))
        }
        Contamination::Inflation { l } => Ok((vec![0.0; d], sigma0.scaled(l - 1.0))),
        Contamination::Shape { rho1 } => {
            let s1 = scaled_toeplitz(d, rho1)?;
            Ok((vec![0.0; d], s1.add_scaled(&sigma0, -1.0)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_variances_and_trace() {
        let v = reference_variances(10);
        assert!((v[0] - 2.0 / 11.0).abs() < 1e-15);
        assert!((v[9] - 20.0 / 11.0).abs() < 1e-15);
        let (_, s1) = build_reference(1).unwrap();
        assert_eq!(s1.get(0, 0), 1.0);
        for d in 1..30 {
            let (_, s) = build_reference(d).unwrap();
            assert!((s.trace() - d as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_closed_forms() {
        let (m, s) = build_reference(10).unwrap();
        assert_eq!(kl_gaussians(&m, &s, &m, &s).unwrap(), 0.0);
        let kl = kl_gaussians(&m, &s, &m, &s.scaled(2.03)).unwrap();
        assert!((kl - 1.0).abs() < 0.01, "{kl}");
        let one = SymMatrix::identity(1);
        assert!((kl_gaussians(&[0.0], &one, &[2.0], &one).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn kl_rejects_indefinite() {
        let bad = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        let id = SymMatrix::identity(2);
        assert!(kl_gaussians(&[0.0; 2], &bad, &[0.0; 2], &id).is_err());
    }

    #[test]
    fn calibration_round_trip() {
        for &target in &[0.3, 1.0, 7.0, 25.0] {
            for knob in [Knob::K, Knob::L, Knob::Rho1] {
                for d in [2, 10] {
                    let v = calibrate(target, knob, d).unwrap();
                    let kl = knob.params(d, v).kl();
                    assert!((kl - target).abs() < 1e-5, "{knob:?} d={d}: {kl}");
                }
            }
        }
        assert_eq!(calibrate(0.0, Knob::L, 10).unwrap(), 1.0);
        assert!(calibrate(-1.0, Knob::K, 10).is_err());
    }

    #[test]
    fn scenarios_combined_kl() {
        for s in Scenario::ALL {
            let kl = s.params(10, 0.1).unwrap().kl();
            assert!((kl - s.published_kl()).abs() < 0.01, "{s:?}: {kl}");
        }
    }

    #[test]
    fn zero_rate_has_no_outliers() {
        let p = Scenario::B.params(5, 0.0).unwrap();
        let xs = sample_stream(&p, 2000, &mut RngStream::new(1)).unwrap();
        assert!(xs.iter().all(|s| !s.is_outlier));
    }

    #[test]
    fn outlier_count_binomial() {
        let p = Scenario::A.params(10, 0.2).unwrap();
        let xs = sample_stream(&p, 10_000, &mut RngStream::new(2)).unwrap();
        let count = xs.iter().filter(|s| s.is_outlier).count() as f64;
        let sd = (10_000.0f64 * 0.2 * 0.8).sqrt();
        assert!((count - 2000.0).abs() <= 4.0 * sd, "{count}");
    }

    #[test]
    fn stream_is_deterministic() {
        let p = Scenario::C.params(4, 0.3).unwrap();
        let a = sample_stream(&p, 100, &mut RngStream::new(3)).unwrap();
        let b = sample_stream(&p, 100, &mut RngStream::new(3)).unwrap();
        let mut ba = Vec::new();
        let mut bb = Vec::new();
        write_csv(&mut ba, &a).unwrap();
        write_csv(&mut bb, &b).unwrap();
        assert_eq!(ba, bb);
        let text = String::from_utf8(ba).unwrap();
        assert!(text.starts_with("x_1,x_2,x_3,x_4,label\n"));
    }

    #[test]
    fn influence_reference_values() {
        let (mu, sigma) = influence(Contamination::Inflation { l: 1.0 }, 5).unwrap();
        assert!(mu.iter().all(|v| *v == 0.0));
        assert_eq!(sigma.frobenius_norm(), 0.0);
        let (mu, _) = influence(Contamination::MeanShift { k: 1.0 }, 2).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((mu[0] + h).abs() < 1e-15 && (mu[1] - h).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(ScenarioParams::new(3, 0.6, 0.0, 1.0, 0.3).is_err());
        assert!(ScenarioParams::new(3, 0.1, -1.0, 1.0, 0.3).is_err());
        assert!(ScenarioParams::new(3, 0.1, 0.0, 0.5, 0.3).is_err());
        assert!(ScenarioParams::new(3, 0.1, 0.0, 1.0, 1.0).is_err());
        assert!("e".parse::<Scenario>().is_err());
        assert_eq!("b".parse::<Scenario>().unwrap(), Scenario::B);
    }
}
