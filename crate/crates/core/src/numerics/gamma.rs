//! Regularised incomplete gamma function and χ² quantiles.

use crate::error::{invalid, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection keeps the approximation in its accurate range.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularised lower incomplete gamma `P(a, x)`.
///
/// Power series below `x < a + 1`, Lentz continued fraction for the upper
/// tail otherwise.
pub fn regularized_lower_gamma(a: f64, x: f64) -> f64 {
    assert!(a > 0.0, "shape must be positive");
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    if x < a + 1.0 {
        lower_series(a, x)
    } else {
        1.0 - upper_continued_fraction(a, x)
    }
}

fn lower_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut denom = a;
    for _ in 0..10_000 {
        denom += 1.0;
        term *= x / denom;
        sum += term;
        if term.abs() < sum.abs() * 1e-17 {
            break;
        }
    }
    (sum.ln() - x + a * x.ln() - ln_gamma(a)).exp()
}

fn upper_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// CDF of the χ² distribution with `dof` degrees of freedom.
pub fn chi2_cdf(dof: usize, x: f64) -> f64 {
    regularized_lower_gamma(dof as f64 / 2.0, x / 2.0)
}

/// Quantile of the χ² distribution: the `q` with `chi2_cdf(dof, q) = p`.
///
/// Bisection on the CDF, which is monotone, so the answer is bracketed from
/// the first step and cannot wander.
pub fn chi2_quantile(dof: usize, p: f64) -> Result<f64> {
    if dof == 0 {
        return Err(invalid("χ² degrees of freedom must be at least 1"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!("probability {p} outside (0, 1)")));
    }
    let mut lo = 0.0;
    let mut hi = (dof as f64).max(1.0);
    while chi2_cdf(dof, hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if chi2_cdf(dof, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        // Γ(6) = 120
        assert!((ln_gamma(6.0) - 120f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn series_and_fraction_agree_at_switch() {
        // Both branches evaluated either side of x = a + 1.
        for &a in &[0.5, 1.0, 2.5, 5.0, 50.0] {
            let x = a + 1.0;
            let below = lower_series(a, x);
            let above = 1.0 - upper_continued_fraction(a, x);
            assert!((below - above).abs() < 1e-13, "a={a}: {below} vs {above}");
        }
    }

    #[test]
    fn exponential_case_closed_form() {
        // P(1, x) = 1 − e^{−x}
        for &x in &[0.1, 1.0, 3.0, 10.0, 30.0] {
            let p = regularized_lower_gamma(1.0, x);
            assert!((p - (1.0 - (-x).exp())).abs() < 1e-14);
        }
    }

    #[test]
    fn quantile_reference_values() {
        assert!((chi2_quantile(1, 0.5).unwrap() - 0.454_936).abs() < 5e-7);
        assert!((chi2_quantile(10, 0.95).unwrap() - 18.3070).abs() < 5e-5);
        assert!((chi2_quantile(10, 0.5).unwrap() - 9.34182).abs() < 5e-6);
        assert!((chi2_quantile(1, 0.95).unwrap() - 3.841_458_820_694_124).abs() < 1e-9);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &d in &[1usize, 2, 3, 10, 50, 100] {
            for &p in &[1e-6, 0.01, 0.5, 0.95, 0.999_999] {
                let q = chi2_quantile(d, p).unwrap();
                assert!((chi2_cdf(d, q) - p).abs() < 1e-10, "d={d} p={p}");
            }
        }
    }

    #[test]
    fn quantile_rejects_bad_probability() {
        assert!(chi2_quantile(3, 0.0).is_err());
        assert!(chi2_quantile(3, 1.0).is_err());
        assert!(chi2_quantile(3, f64::NAN).is_err());
        assert!(chi2_quantile(0, 0.5).is_err());
    }
}
