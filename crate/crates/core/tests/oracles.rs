//! Cross-checks of the numerical building blocks against nalgebra and statrs.

use nalgebra::DMatrix;
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use streamcov::naive::NaiveState;
use streamcov::numerics::{chi2_cdf, chi2_quantile, sym_eigen, toeplitz, Cholesky, RngStream, SymMatrix};
use streamcov::simgen::{build_reference, kl_gaussians, scaled_toeplitz};
use streamcov::step::StepSchedule;

fn to_na(a: &SymMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.dim(), a.dim(), a.as_slice())
}

fn random_sym(d: usize, rng: &mut RngStream) -> SymMatrix {
    let mut rows = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in i..d {
            let v = rng.standard_normal();
            rows[i][j] = v;
            rows[j][i] = v;
        }
    }
    SymMatrix::from_rows(&rows).unwrap()
}

fn random_spd(d: usize, rng: &mut RngStream) -> SymMatrix {
    let g = random_sym(d, rng);
    let gg = g.as_matrix().matmul(g.as_matrix());
    SymMatrix::new(gg).add_scaled(&SymMatrix::identity(d), 0.5)
}

fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

#[test]
fn eigenvalues_match_nalgebra() {
    let mut rng = RngStream::new(11);
    for d in [1, 2, 3, 7, 10, 25, 60] {
        for _ in 0..3 {
            let a = random_sym(d, &mut rng);
            let ours = sym_eigen(&a).unwrap();
            let mut theirs: Vec<f64> = to_na(&a).symmetric_eigen().eigenvalues.iter().copied().collect();
            theirs.sort_by(|x, y| y.total_cmp(x));
            let scale = a.frobenius_norm().max(1.0);
            for (x, y) in ours.values.iter().zip(&theirs) {
                assert!((x - y).abs() <= 1e-10 * scale, "d={d}: {x} vs {y}");
            }
            let rebuilt = to_na(&ours.reconstruct(&ours.values));
            assert!(rel_diff(&rebuilt, &to_na(&a)) < 1e-8);
        }
    }
}

#[test]
fn cholesky_inverse_and_determinant_match_nalgebra() {
    let mut rng = RngStream::new(12);
    for d in [1, 4, 10, 30] {
        let a = random_spd(d, &mut rng);
        let na = to_na(&a);
        let ch = Cholesky::new(&a).unwrap();
        let inv = na.clone().try_inverse().unwrap();
        assert!(rel_diff(&to_na(&ch.inverse()), &inv) < 1e-9);
        let log_det = na.determinant().ln();
        assert!((ch.log_det() - log_det).abs() < 1e-9 * log_det.abs().max(1.0));
        let b: Vec<f64> = (0..d).map(|i| i as f64 - 1.5).collect();
        let x = ch.solve(&b);
        let back = &na * nalgebra::DVector::from_vec(x);
        for (u, v) in back.iter().zip(&b) {
            assert!((u - v).abs() < 1e-9);
        }
    }
}

#[test]
fn chi2_matches_statrs() {
    for dof in 1..=40 {
        let reference = ChiSquared::new(dof as f64).unwrap();
        for p in [1e-6, 0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99, 0.999999] {
            let ours = chi2_quantile(dof, p).unwrap();
            let theirs = reference.inverse_cdf(p);
            assert!((ours - theirs).abs() <= 1e-6 * theirs.max(1.0), "dof={dof} p={p}: {ours} vs {theirs}");
        }
        for x in [0.01, 0.5, 1.0, dof as f64, 3.0 * dof as f64 + 10.0] {
            assert!((chi2_cdf(dof, x) - reference.cdf(x)).abs() < 1e-10, "dof={dof} x={x}");
        }
    }
}

#[test]
fn toeplitz_positive_definite_over_grid() {
    for d in [1, 2, 5, 10, 50] {
        for i in -19..=19 {
            let rho = i as f64 * 0.05;
            let t = toeplitz(d, rho).unwrap();
            let min = to_na(&t).symmetric_eigen().eigenvalues.min();
            assert!(min > 0.0, "d={d} rho={rho}: {min}");
            assert!(Cholesky::new(&t).is_ok());
        }
    }
}

#[test]
fn reference_covariance_determinant() {
    // det(D T D) = Π σ²_i · (1 − ρ²)^(d−1) for the AR(1) correlation.
    for d in [1, 3, 10] {
        let (_, s) = build_reference(d).unwrap();
        let prod: f64 = (1..=d).map(|i| 2.0 * i as f64 / (d as f64 + 1.0)).product();
        let want = prod * (1.0 - 0.09f64).powi(d as i32 - 1);
        assert!((to_na(&s).determinant() / want - 1.0).abs() < 1e-10);
    }
}

fn kl_reference(mu_a: &[f64], sa: &SymMatrix, mu_b: &[f64], sb: &SymMatrix) -> f64 {
    let (a, b) = (to_na(sa), to_na(sb));
    let b_inv = b.clone().try_inverse().unwrap();
    let diff = nalgebra::DVector::from_iterator(mu_a.len(), mu_b.iter().zip(mu_a).map(|(x, y)| x - y));
    let maha = (diff.transpose() * &b_inv * &diff)[(0, 0)];
    0.5 * ((&b_inv * &a).trace() - mu_a.len() as f64 + maha + (b.determinant() / a.determinant()).ln())
}

#[test]
fn kl_matches_dense_formula() {
    let mut rng = RngStream::new(13);
    for d in [1, 2, 5, 8] {
        let (sa, sb) = (random_spd(d, &mut rng), random_spd(d, &mut rng));
        let ma: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        let mb: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        let ours = kl_gaussians(&ma, &sa, &mb, &sb).unwrap();
        let theirs = kl_reference(&ma, &sa, &mb, &sb);
        assert!((ours - theirs).abs() < 1e-9 * theirs.max(1.0), "{ours} vs {theirs}");
    }
    let (m0, s0) = build_reference(10).unwrap();
    let s1 = scaled_toeplitz(10, 0.85).unwrap();
    let ours = kl_gaussians(&m0, &s0, &m0, &s1).unwrap();
    assert!((ours - kl_reference(&m0, &s0, &m0, &s1)).abs() < 1e-9);
}

#[test]
fn kl_of_scaled_covariance() {
    let (m0, s0) = build_reference(10).unwrap();
    let kl = kl_gaussians(&m0, &s0, &m0, &s0.scaled(2.03)).unwrap();
    assert!((kl - 1.0).abs() < 0.01, "{kl}");
}

#[test]
fn naive_inverse_matches_nalgebra_inverse() {
    let mut rng = RngStream::new(14);
    let d = 10;
    let xs: Vec<Vec<f64>> = (0..1000)
        .map(|_| (0..d).map(|k| (1.0 + k as f64 * 0.5) * rng.standard_normal()).collect())
        .collect();
    let (mut s, _) = NaiveState::initialize(&xs[..100], 0.05, StepSchedule::slow_default()).unwrap();
    s.process(&xs[100..]).unwrap();
    let inv = to_na(&s.cov).try_inverse().unwrap();
    assert!(rel_diff(&to_na(&s.cov_inv), &inv) < 1e-8);
    let prod = to_na(&s.cov) * to_na(&s.cov_inv);
    assert!(rel_diff(&prod, &DMatrix::identity(d, d)) < 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eigen_trace_and_determinant(seed in any::<u64>(), d in 1usize..12) {
        let mut rng = RngStream::new(seed);
        let a = random_spd(d, &mut rng);
        let e = sym_eigen(&a).unwrap();
        let trace: f64 = e.values.iter().sum();
        prop_assert!((trace - a.trace()).abs() <= 1e-9 * a.trace().abs().max(1.0));
        let log_det: f64 = e.values.iter().map(|v| v.ln()).sum();
        let want = to_na(&a).determinant().ln();
        prop_assert!((log_det - want).abs() <= 1e-8 * want.abs().max(1.0));
        prop_assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn chi2_quantile_monotone(dof in 1usize..60, p in 0.001f64..0.998) {
        let q1 = chi2_quantile(dof, p).unwrap();
        let q2 = chi2_quantile(dof, p + 0.001).unwrap();
        prop_assert!(q2 > q1);
    }
}
