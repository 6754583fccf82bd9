//! Median covariation matrix: the geometric median of the rank-one matrices
//! `(X − m)(X − m)ᵀ` under the Frobenius norm.
//!
//! Every update only touches the upper triangle and mirrors it, so the
//! iterates stay exactly symmetric.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::geom_median::COINCIDENCE_THRESHOLD;
use crate::numerics::SymMatrix;
use crate::step::StepSchedule;

/// `‖y yᵀ − V‖_F`, evaluated entrywise without forming `y yᵀ`.
pub fn rank_one_distance(y: &[f64], v: &SymMatrix) -> f64 {
    let d = y.len();
    let mut s = 0.0;
    for i in 0..d {
        let row = v.row(i);
        let yi = y[i];
        let diag = yi * yi - row[i];
        s += diag * diag;
        for j in (i + 1)..d {
            let e = yi * y[j] - row[j];
            s += 2.0 * e * e;
        }
    }
    s.sqrt()
}

/// `target += w · (y yᵀ − V)` on the upper triangle, mirrored.
fn accumulate_direction(target: &mut [f64], y: &[f64], v: &SymMatrix, w: f64) {
    let d = y.len();
    for i in 0..d {
        let row = v.row(i);
        for j in i..d {
            let e = w * (y[i] * y[j] - row[j]);
            target[i * d + j] += e;
            if i != j {
                target[j * d + i] += e;
            }
        }
    }
}

fn frobenius(entries: &[f64]) -> f64 {
    entries.iter().map(|e| e * e).sum::<f64>().sqrt()
}

fn centered(x: &[f64], center: &[f64]) -> Vec<f64> {
    x.iter().zip(center).map(|(a, b)| a - b).collect()
}

/// Offline MCM by the Weiszfeld iteration in matrix space.
///
/// Starts from the mean of the rank-one terms (the covariance about
/// `m_hat`); the stopping rule and coincident-term guard match
/// [`crate::geom_median::weiszfeld_median`], with norms in Frobenius.
pub fn weiszfeld_mcm(
    points: &[Vec<f64>],
    m_hat: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<SymMatrix> {
    if points.is_empty() {
        return Err(invalid("no observations"));
    }
    let d = m_hat.len();
    if m_hat.iter().any(|v| !v.is_finite()) {
        return Err(invalid("center has non-finite entries"));
    }
    let ys: Vec<Vec<f64>> = points
        .iter()
        .enumerate()
        .map(|(index, x)| {
            check_dim(d, x.len())?;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(crate::Error::NonFinite { index });
            }
            Ok(centered(x, m_hat))
        })
        .collect::<Result<_>>()?;

    let n = ys.len() as f64;
    let mut v = SymMatrix::zeros(d);
    {
        let zero = SymMatrix::zeros(d);
        let acc = v.as_mut_slice();
        for y in &ys {
            accumulate_direction(acc, y, &zero, 1.0 / n);
        }
    }

    for _ in 0..max_iter {
        let mut next = SymMatrix::zeros(d);
        let mut pull = vec![0.0; d * d];
        let mut weight = 0.0;
        let mut coincident = 0usize;
        {
            let zero = SymMatrix::zeros(d);
            let acc = next.as_mut_slice();
            for y in &ys {
                let dist = rank_one_distance(y, &v);
                if dist < COINCIDENCE_THRESHOLD {
                    coincident += 1;
                    continue;
                }
                let w = 1.0 / dist;
                weight += w;
                accumulate_direction(acc, y, &zero, w);
                accumulate_direction(&mut pull, y, &v, w);
            }
        }
        if weight == 0.0 {
            return Ok(v);
        }
        if coincident > 0 && frobenius(&pull) <= coincident as f64 {
            // The iterate sits on an optimal rank-one term.
            return Ok(v);
        }
        let next = next.scaled(1.0 / weight);
        let step = next.frobenius_distance(&v);
        v = next;
        if step <= tol * (1.0 + v.frobenius_norm()) {
            break;
        }
    }
    Ok(v)
}

/// Online MCM: the SGD iterate `V` and its running average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmState {
    pub v: SymMatrix,
    pub v_bar: SymMatrix,
    /// Updates applied so far; the next update uses step `n + 1`.
    pub n: u64,
    pub step: StepSchedule,
}

impl McmState {
    pub fn new(v0: SymMatrix, step: StepSchedule) -> Self {
        Self::with_counter(v0, step, 0)
    }

    pub fn with_counter(v0: SymMatrix, step: StepSchedule, n: u64) -> Self {
        Self {
            v_bar: v0.clone(),
            v: v0,
            n,
            step,
        }
    }

    pub fn dim(&self) -> usize {
        self.v.dim()
    }

    /// One step toward `G = (x − m̄)(x − m̄)ᵀ`, where `m̄` is the median
    /// average from before this observation.
    pub fn update(&mut self, x: &[f64], m_bar_prev: &[f64]) -> Result<()> {
        self.update_block(&[x], m_bar_prev)
    }

    /// Mini-batch step averaging the unit gradients of the block, all
    /// centred at the block-start `m̄`.
    pub fn update_block<X: AsRef<[f64]>>(&mut self, block: &[X], m_bar_prev: &[f64]) -> Result<()> {
        if block.is_empty() {
            return Err(invalid("empty block"));
        }
        let d = self.dim();
        check_dim(d, m_bar_prev.len())?;
        for x in block {
            check_dim(d, x.as_ref().len())?;
        }
        let gamma = self.step.step(self.n + 1);
        let mut dir = vec![0.0; d * d];
        for x in block {
            let y = centered(x.as_ref(), m_bar_prev);
            let dist = rank_one_distance(&y, &self.v);
            if dist < COINCIDENCE_THRESHOLD {
                continue;
            }
            accumulate_direction(&mut dir, &y, &self.v, 1.0 / dist);
        }
        self.apply(&dir, gamma / block.len() as f64);
        self.advance_average();
        Ok(())
    }

    fn apply(&mut self, dir: &[f64], scale: f64) {
        for (v, g) in self.v.as_mut_slice().iter_mut().zip(dir) {
            *v += scale * g;
        }
    }

    fn advance_average(&mut self) {
        let w = 1.0 / (self.n as f64 + 2.0);
        let d = self.dim();
        let v = self.v.as_slice().to_vec();
        let bar = self.v_bar.as_mut_slice();
        for i in 0..d {
            for j in i..d {
                let value = bar[i * d + j] + w * (v[i * d + j] - bar[i * d + j]);
                bar[i * d + j] = value;
                bar[j * d + i] = value;
            }
        }
        self.n += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sym_eigen, Matrix};
    use proptest::prelude::*;

    #[test]
    fn identical_terms_fixed_point() {
        let pts = vec![vec![1.0, 2.0]; 4];
        let v = weiszfeld_mcm(&pts, &[0.0, 0.0], 1e-12, 100).unwrap();
        assert_eq!(v, SymMatrix::outer(&[1.0, 2.0]));
    }

    #[test]
    fn scalar_case_is_median_of_squares() {
        let pts = vec![vec![-1.0], vec![0.0], vec![1.0]];
        let v = weiszfeld_mcm(&pts, &[0.0], 1e-14, 10_000).unwrap();
        assert!((v.get(0, 0) - 1.0).abs() < 1e-6, "{v:?}");
    }

    #[test]
    fn rank_one_distance_matches_dense() {
        let y = [0.3, -1.2, 2.0];
        let v = SymMatrix::from_fn(3, |i, j| (i + 2 * j) as f64 * 0.1);
        let g = SymMatrix::outer(&y);
        assert!((rank_one_distance(&y, &v) - g.frobenius_distance(&v)).abs() < 1e-14);
    }

    #[test]
    fn unit_step_toward_rank_one_term() {
        let mut s = McmState::new(SymMatrix::zeros(2), StepSchedule::location_default());
        s.update(&[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(s.v, SymMatrix::diag(&[1.0, 0.0]));
    }

    #[test]
    fn no_move_when_term_equals_iterate() {
        let v0 = SymMatrix::outer(&[2.0, -1.0]);
        let mut s = McmState::new(v0.clone(), StepSchedule::location_default());
        s.update(&[3.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(s.v, v0);
        let mut b = McmState::new(v0.clone(), StepSchedule::location_default().for_batch(3));
        let block = vec![vec![3.0, 0.0]; 3];
        b.update_block(&block, &[1.0, 1.0]).unwrap();
        assert_eq!(b.v, v0);
        assert!(b.update_block::<Vec<f64>>(&[], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn block_of_one_matches_single_update() {
        let step = StepSchedule::location_default();
        let mut a = McmState::new(SymMatrix::identity(3), step);
        let mut b = a.clone();
        let m = [0.1, 0.0, -0.2];
        for i in 0..25 {
            let t = i as f64;
            let x = vec![t.sin(), (2.0 * t).cos(), 0.5 * t.sin() * t.cos()];
            a.update(&x, &m).unwrap();
            b.update_block(std::slice::from_ref(&x), &m).unwrap();
        }
        assert_eq!(a, b);
    }

    fn rotation(theta: f64) -> Matrix {
        let (s, c) = theta.sin_cos();
        Matrix::from_rows(&[vec![c, -s], vec![s, c]]).unwrap()
    }

    proptest! {
        #[test]
        fn bounded_step_and_exact_symmetry(
            xs in prop::collection::vec(prop::collection::vec(-1e6..1e6f64, 3), 1..30),
        ) {
            let mut s = McmState::new(SymMatrix::identity(3), StepSchedule::location_default());
            let m = [0.0; 3];
            for x in &xs {
                let before = s.v.clone();
                let gamma = s.step.step(s.n + 1);
                s.update(x, &m).unwrap();
                prop_assert!(before.frobenius_distance(&s.v) <= gamma * (1.0 + 1e-12));
                prop_assert!(s.v.as_matrix().max_asymmetry() == 0.0);
                prop_assert!(s.v_bar.as_matrix().max_asymmetry() == 0.0);
            }
        }

        #[test]
        fn orthogonal_equivariance(
            xs in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 2), 1..40),
            theta in 0.0..6.28f64,
        ) {
            let q = rotation(theta);
            let v0 = SymMatrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
            let step = StepSchedule::location_default();
            let mut a = McmState::new(v0.clone(), step);
            let mut b = McmState::new(v0.congruence(&q), step);
            let m = [0.0, 0.0];
            for x in &xs {
                a.update(x, &m).unwrap();
                b.update(&q.mul_vec(x), &m).unwrap();
            }
            let rotated = a.v.congruence(&q);
            prop_assert!(rotated.frobenius_distance(&b.v) < 1e-9 * (1.0 + b.v.frobenius_norm()));
        }
    }

    #[test]
    fn isotropic_data_gives_isotropic_mcm() {
        let mut rng = crate::numerics::RngStream::new(17);
        let pts: Vec<Vec<f64>> = (0..100_000)
            .map(|_| vec![rng.standard_normal(), rng.standard_normal()])
            .collect();
        let v = weiszfeld_mcm(&pts, &[0.0, 0.0], 1e-10, 500).unwrap();
        let e = sym_eigen(&v).unwrap();
        assert!((e.values[0] / e.values[1] - 1.0).abs() < 0.02, "{:?}", e.values);

        let mut s = McmState::new(SymMatrix::identity(2), StepSchedule::location_default());
        for x in pts.iter().take(10_000) {
            s.update(x, &[0.0, 0.0]).unwrap();
        }
        let e = sym_eigen(&s.v_bar).unwrap();
        assert!((e.values[0] / e.values[1] - 1.0).abs() < 0.05, "{:?}", e.values);
        assert!(crate::numerics::eigen::orthonormality_defect(&e.vectors) < 1e-10);
    }
}
