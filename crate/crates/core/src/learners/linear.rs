use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{spd_solve, with_intercept};
use crate::error::{Error, Result};

/// Affine model `y = b0 + x' b`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearModel {
    /// Intercept first.
    pub coefficients: Vec<f64>,
    pub ridge: f64,
}

impl LinearModel {
    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn slopes(&self) -> &[f64] {
        &self.coefficients[1..]
    }

    pub fn predict_row(&self, row: impl IntoIterator<Item = f64>) -> f64 {
        self.coefficients[0]
            + self.coefficients[1..].iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }

    pub fn predict(&self, features: &DMatrix<f64>) -> Vec<f64> {
        (0..features.nrows()).map(|i| self.predict_row(features.row(i).iter().copied())).collect()
    }
}

/// Least squares with an optional ridge penalty on the slopes (never the
/// intercept), solved through the normal equations.
pub fn fit_ols(features: &DMatrix<f64>, targets: &[f64], ridge: f64) -> Result<LinearModel> {
    if features.nrows() != targets.len() || targets.is_empty() {
        return Err(Error::Shape(format!(
            "features have {} rows, targets {}",
            features.nrows(),
            targets.len()
        )));
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge must be >= 0, got {ridge}")));
    }
    let x = with_intercept(features);
    let mut xtx = x.transpose() * &x;
    for j in 1..xtx.ncols() {
        xtx[(j, j)] += ridge;
    }
    let xty = x.transpose() * DVector::from_column_slice(targets);
    let beta = spd_solve(&xtx, &xty).ok_or_else(|| {
        Error::RankDeficient(format!("{} rows x {} columns, ridge {ridge}", x.nrows(), x.ncols()))
    })?;
    Ok(LinearModel { coefficients: beta.iter().copied().collect(), ridge })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_target() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, 1.0, 0.0, -2.0]);
        let m = fit_ols(&x, &[3.0; 4], 0.0).unwrap();
        assert!((m.intercept() - 3.0).abs() < 1e-12);
        assert!(m.slopes().iter().all(|b| b.abs() < 1e-12));
    }

    #[test]
    fn exact_line() {
        let x = DMatrix::from_column_slice(5, 1, &[0.0, 1.0, 2.0, 3.0, 4.0]);
        let y: Vec<f64> = (0..5).map(|i| 2.0 * i as f64).collect();
        let m = fit_ols(&x, &y, 0.0).unwrap();
        assert!((m.slopes()[0] - 2.0).abs() < 1e-12);
        assert!(m.intercept().abs() < 1e-12);
    }

    // Gaussian elimination with partial pivoting on the augmented normal
    // equations; shares nothing with the Cholesky path.
    fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let piv = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
            a.swap(k, piv);
            b.swap(k, piv);
            for i in k + 1..n {
                let f = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
            x[k] = (b[k] - s) / a[k][k];
        }
        x
    }

    #[test]
    fn matches_gaussian_elimination() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &ridge in &[0.0, 0.7] {
            let rows: Vec<[f64; 3]> =
                (0..10).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
            let y: Vec<f64> = (0..10).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let x = DMatrix::from_fn(10, 3, |i, j| rows[i][j]);
            let m = fit_ols(&x, &y, ridge).unwrap();

            let mut a = vec![vec![0.0; 4]; 4];
            let mut b = vec![0.0; 4];
            for i in 0..10 {
                let r = [1.0, rows[i][0], rows[i][1], rows[i][2]];
                for p in 0..4 {
                    b[p] += r[p] * y[i];
                    for q in 0..4 {
                        a[p][q] += r[p] * r[q];
                    }
                }
            }
            for j in 1..4 {
                a[j][j] += ridge;
            }
            let oracle = gauss_solve(a, b);
            for (got, want) in m.coefficients.iter().zip(&oracle) {
                assert!((got - want).abs() < 1e-10, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn singular_without_ridge_is_rank_error() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        assert!(matches!(fit_ols(&x, &[1.0, 2.0, 3.0], 0.0), Err(Error::RankDeficient(_))));
        assert!(fit_ols(&x, &[1.0, 2.0, 3.0], 0.1).is_ok());
    }

    #[test]
    fn shift_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(12, 2, |_, _| rng.random::<f64>());
        let y: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).collect();
        let y2: Vec<f64> = y.iter().map(|v| v + 5.0).collect();
        let m1 = fit_ols(&x, &y, 0.3).unwrap();
        let m2 = fit_ols(&x, &y2, 0.3).unwrap();
        assert!((m2.intercept() - m1.intercept() - 5.0).abs() < 1e-10);
        for (a, b) in m1.slopes().iter().zip(m2.slopes()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
