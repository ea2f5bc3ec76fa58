//! Weighted isotonic regression by pool-adjacent-violators, and the
//! calibration map built on it.

use serde::Serialize;

use super::clip_probability;
use crate::error::{Error, Result};

/// Nondecreasing step fit: `levels[k]` is the fitted value at predictor
/// `breakpoints[k]`. Between breakpoints the fit is interpolated linearly;
/// outside it is held at the end levels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsotonicFit {
    pub breakpoints: Vec<f64>,
    pub levels: Vec<f64>,
    /// Total input weight at each breakpoint.
    pub weights: Vec<f64>,
}

impl IsotonicFit {
    pub fn predict(&self, x: f64) -> f64 {
        let b = &self.breakpoints;
        let k = b.len();
        if x <= b[0] {
            return self.levels[0];
        }
        if x >= b[k - 1] {
            return self.levels[k - 1];
        }
        // first breakpoint strictly greater than x
        let hi = b.partition_point(|&t| t <= x);
        let lo = hi - 1;
        if b[lo] == x {
            return self.levels[lo];
        }
        let frac = (x - b[lo]) / (b[hi] - b[lo]);
        self.levels[lo] + frac * (self.levels[hi] - self.levels[lo])
    }

    /// Weighted mean of the levels, equal to the weighted mean of the labels.
    pub fn weighted_mean(&self) -> f64 {
        let w: f64 = self.weights.iter().sum();
        self.levels.iter().zip(&self.weights).map(|(l, w)| l * w).sum::<f64>() / w
    }
}

/// Minimizes `sum w_i (f(x_i) - y_i)^2` over nondecreasing `f`. Observations
/// with equal predictor values are pooled first.
pub fn fit_isotonic(predictor: &[f64], labels: &[f64], weights: &[f64]) -> Result<IsotonicFit> {
    let n = predictor.len();
    if labels.len() != n || weights.len() != n {
        return Err(Error::Shape(format!(
            "predictor {n}, labels {}, weights {}",
            labels.len(),
            weights.len()
        )));
    }
    if n == 0 {
        return Err(Error::EmptyInput("isotonic regression needs at least one point".into()));
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::InvalidArgument("isotonic weights must be positive".into()));
    }
    if predictor.iter().chain(labels).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("isotonic inputs must be finite".into()));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| predictor[i].total_cmp(&predictor[j]).then(i.cmp(&j)));

    // tie pooling
    let mut breakpoints = Vec::new();
    let mut sum_wy = Vec::new();
    let mut sum_w = Vec::new();
    for &i in &order {
        if breakpoints.last() == Some(&predictor[i]) {
            *sum_wy.last_mut().unwrap() += weights[i] * labels[i];
            *sum_w.last_mut().unwrap() += weights[i];
        } else {
            breakpoints.push(predictor[i]);
            sum_wy.push(weights[i] * labels[i]);
            sum_w.push(weights[i]);
        }
    }

    // blocks: (sum of w*y, sum of w, number of breakpoints covered)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(breakpoints.len());
    for (&wy, &w) in sum_wy.iter().zip(&sum_w) {
        blocks.push((wy, w, 1));
        while blocks.len() > 1 {
            let (wy2, w2, c2) = blocks[blocks.len() - 1];
            let (wy1, w1, c1) = blocks[blocks.len() - 2];
            if wy1 / w1 > wy2 / w2 {
                blocks.pop();
                *blocks.last_mut().unwrap() = (wy1 + wy2, w1 + w2, c1 + c2);
            } else {
                break;
            }
        }
    }
    let mut levels = Vec::with_capacity(breakpoints.len());
    for (wy, w, c) in blocks {
        levels.extend(std::iter::repeat_n(wy / w, c));
    }
    Ok(IsotonicFit { breakpoints, levels, weights: sum_w })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationKind {
    /// Outputs clipped to `[1e-6, 1 - 1e-6]`.
    Probability,
    Real,
}

/// Fits an isotonic regression of `labels` on `raw` (unit weights) and maps
/// every raw value through it.
pub fn calibrate_predictions(raw: &[f64], labels: &[f64], kind: CalibrationKind) -> Result<Vec<f64>> {
    let fit = fit_isotonic(raw, labels, &vec![1.0; raw.len()])?;
    Ok(apply_calibration(&fit, raw, kind))
}

/// Maps raw values through an existing fit.
pub fn apply_calibration(fit: &IsotonicFit, raw: &[f64], kind: CalibrationKind) -> Vec<f64> {
    raw.iter()
        .map(|&r| {
            let c = fit.predict(r);
            match kind {
                CalibrationKind::Probability => clip_probability(c),
                CalibrationKind::Real => c,
            }
        })
        .collect()
}
