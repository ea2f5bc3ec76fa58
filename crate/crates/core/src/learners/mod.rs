//! Nuisance-function learners, all implemented from scratch on top of
//! `nalgebra` dense linear algebra.

mod forest;
mod gp;
mod isotonic;
mod linear;
mod logistic;

pub use forest::{fit_forest, ForestMode, ForestModel, ForestParams, Tree};
pub use gp::{
    gp_poly_fit, log_marginal_likelihood_dense, GpPolyModel, KernelConfig, GP_C_GRID,
    GP_SIGMA2_GRID, GP_REFINE_STEP,
};
pub use isotonic::{
    apply_calibration, calibrate_predictions, fit_isotonic, CalibrationKind, IsotonicFit,
};
pub use linear::{fit_ols, LinearModel};
pub use logistic::{fit_logistic_irls, score_max_norm, LogisticModel};

use nalgebra::{DMatrix, DVector};

/// Probabilities are clipped to `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-6;

pub fn clip_probability(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// `[1 | x]`.
pub(crate) fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    DMatrix::from_fn(n, x.ncols() + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] })
}

/// Solves `a x = b` for symmetric positive definite `a`. Returns `None` when
/// the factorization fails or the smallest pivot is negligible relative to
/// the largest.
pub(crate) fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let chol = a.clone().cholesky()?;
    let l = chol.l_dirty();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..a.nrows() {
        let d = l[(i, i)] * l[(i, i)];
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if !(lo > 1e-13 * hi) {
        return None;
    }
    Some(chol.solve(b))
}
