use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{clip_probability, spd_solve, with_intercept};
use crate::error::{Error, Result};

const MAX_HALVINGS: usize = 10;

/// Logistic regression fitted by penalized IRLS.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogisticModel {
    /// Intercept first.
    pub coefficients: Vec<f64>,
    pub ridge: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl LogisticModel {
    pub fn linear_predictor(&self, row: impl IntoIterator<Item = f64>) -> f64 {
        self.coefficients[0]
            + self.coefficients[1..].iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }

    /// Clipped probabilities.
    pub fn predict(&self, features: &DMatrix<f64>) -> Vec<f64> {
        (0..features.nrows())
            .map(|i| clip_probability(sigmoid(self.linear_predictor(features.row(i).iter().copied()))))
            .collect()
    }
}

pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

// log(1 + e^t) without overflow
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn penalized_loglik(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, ridge: f64) -> f64 {
    let eta = x * beta;
    let ll: f64 = eta.iter().zip(y.iter()).map(|(&t, &yi)| yi * t - softplus(t)).sum();
    ll - 0.5 * ridge * beta.norm_squared()
}

/// Maximizes `sum[y t - log(1 + e^t)] - ridge/2 * |beta|^2`, with the penalty
/// on every coefficient including the intercept, so any `ridge > 0` has a
/// finite maximizer. Newton steps are halved (at most 10 times) until the
/// objective does not decrease. Convergence means the max-norm of the
/// penalized score is at most `tol`; separation with `ridge = 0` leaves
/// `converged = false` instead of failing.
pub fn fit_logistic_irls(
    features: &DMatrix<f64>,
    labels: &[f64],
    ridge: f64,
    max_iter: usize,
    tol: f64,
) -> Result<LogisticModel> {
    let n = labels.len();
    if features.nrows() != n || n == 0 {
        return Err(Error::Shape(format!("features have {} rows, labels {n}", features.nrows())));
    }
    if labels.iter().any(|&l| l != 0.0 && l != 1.0) {
        return Err(Error::InvalidArgument("logistic labels must be 0 or 1".into()));
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge must be >= 0, got {ridge}")));
    }
    let x = with_intercept(features);
    let k = x.ncols();
    let y = DVector::from_column_slice(labels);
    let mut beta = DVector::<f64>::zeros(k);
    let mut obj = penalized_loglik(&x, &y, &beta, ridge);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iter {
        let eta = &x * &beta;
        let p = eta.map(sigmoid);
        let grad = x.transpose() * (&y - &p) - &beta * ridge;
        if grad.amax() <= tol {
            converged = true;
            break;
        }
        iterations += 1;
        let w = p.map(|pi| pi * (1.0 - pi));
        let mut h = DMatrix::<f64>::zeros(k, k);
        for i in 0..n {
            let wi = w[i];
            if wi == 0.0 {
                continue;
            }
            for a in 0..k {
                let xa = wi * x[(i, a)];
                for b in a..k {
                    h[(a, b)] += xa * x[(i, b)];
                }
            }
        }
        for a in 0..k {
            h[(a, a)] += ridge;
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        let Some(step) = spd_solve(&h, &grad) else {
            break;
        };
        // near the optimum the objective change drops below rounding
        let slack = 16.0 * f64::EPSILON * (1.0 + obj.abs());
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand = &beta + &step * t;
            let cand_obj = penalized_loglik(&x, &y, &cand, ridge);
            if cand_obj.is_finite() && cand_obj >= obj - slack {
                beta = cand;
                obj = cand_obj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if !converged {
        // one last check after the final accepted step
        let p = (&x * &beta).map(sigmoid);
        let grad = x.transpose() * (&y - &p) - &beta * ridge;
        converged = grad.amax() <= tol;
    }
    Ok(LogisticModel { coefficients: beta.iter().copied().collect(), ridge, converged, iterations })
}

/// Max-norm of the penalized score at the model's coefficients.
pub fn score_max_norm(model: &LogisticModel, features: &DMatrix<f64>, labels: &[f64]) -> f64 {
    let x = with_intercept(features);
    let beta = DVector::from_column_slice(&model.coefficients);
    let p = (&x * &beta).map(sigmoid);
    let y = DVector::from_column_slice(labels);
    (x.transpose() * (y - p) - beta * model.ridge).amax()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intercept_only_half_labels() {
        let x = DMatrix::<f64>::zeros(6, 0);
        let m = fit_logistic_irls(&x, &[0.0, 1.0, 0.0, 1.0, 1.0, 0.0], 0.0, 50, 1e-10).unwrap();
        assert!(m.converged);
        assert!(m.coefficients[0].abs() < 1e-12);
        assert!((m.predict(&x)[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn all_ones_with_ridge_is_finite() {
        let x = DMatrix::from_column_slice(5, 1, &[0.1, -0.3, 0.5, 1.2, -2.0]);
        let m = fit_logistic_irls(&x, &[1.0; 5], 1.0, 100, 1e-10).unwrap();
        assert!(m.converged);
        assert!(m.coefficients.iter().all(|b| b.is_finite()));
        assert!(m.predict(&x).iter().all(|&p| p < 1.0));
    }

    #[test]
    fn separable_toy_with_ridge_has_zero_score() {
        let x = DMatrix::from_column_slice(6, 1, &[-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]);
        let y = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let m = fit_logistic_irls(&x, &y, 0.1, 100, 1e-10).unwrap();
        assert!(m.converged);
        assert!(score_max_norm(&m, &x, &y) <= 1e-8);
    }

    #[test]
    fn separation_without_ridge_does_not_panic() {
        let x = DMatrix::from_column_slice(6, 1, &[-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]);
        let y = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let m = fit_logistic_irls(&x, &y, 0.0, 30, 1e-12).unwrap();
        assert!(m.coefficients.iter().all(|b| b.is_finite()));
        let p = m.predict(&x);
        assert!(p.iter().all(|&pi| (1e-6..=1.0 - 1e-6).contains(&pi)));
    }

    #[test]
    fn rejects_non_binary_labels() {
        let x = DMatrix::<f64>::zeros(2, 0);
        assert!(fit_logistic_irls(&x, &[0.0, 2.0], 0.0, 10, 1e-8).is_err());
    }
}
