//! Automatic debiasing: the Riesz representer of
//! `m -> E[1(S=1,V=v) (m(1,X) - m(0,X))]` learned by minimizing the empirical
//! loss `(1/n) sum [g(Z_i)^2 - 2 q(Z_i; g)]` with
//! `q(Z; g) = 1(S=1,V=v) [g(1,X) - g(0,X)]`, over a linear sieve.
//!
//! The representer is signed: positive on treated units, negative on
//! controls. The weighted estimator therefore uses `g` on treated and `-g`
//! on control residuals.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::nuisance::fit_outcome_models;
use super::{report_from_eif, weighted_dr, EstimateReport, FeatureViews, OutcomeLearner};
use crate::data::{SubgroupTarget, TrialDataset};
use crate::error::{Error, Result};
use crate::learners::spd_solve;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RieszBasis {
    /// `(1, z, a, a z)` for the feature row `z`.
    Linear,
    /// One indicator per observed `(a, z)` cell; a counterfactual cell that
    /// was never observed maps to the zero vector.
    Saturated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RieszConfig {
    pub basis: RieszBasis,
    pub ridge: f64,
    /// Outcome models plugged into the weighted estimator.
    pub outcome: OutcomeLearner,
}

impl Default for RieszConfig {
    fn default() -> Self {
        RieszConfig { basis: RieszBasis::Linear, ridge: 1e-4, outcome: OutcomeLearner::Ols { ridge: 0.0 } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RieszFit {
    pub basis: RieszBasis,
    pub beta: Vec<f64>,
    pub ridge: f64,
    /// `g(A_i, z_i)` at every unit.
    pub gamma_star: Vec<f64>,
    /// Empirical loss `beta' G beta - 2 beta' h`.
    pub loss: f64,
}

struct BasisMap {
    kind: RieszBasis,
    cells: HashMap<(u8, Vec<u64>), usize>,
    dim: usize,
}

impl BasisMap {
    fn new(kind: RieszBasis, a: &[u8], z: &DMatrix<f64>) -> Self {
        let mut cells = HashMap::new();
        let dim = match kind {
            RieszBasis::Linear => 2 * (z.ncols() + 1),
            RieszBasis::Saturated => {
                for i in 0..z.nrows() {
                    let next = cells.len();
                    cells.entry((a[i], row_key(z, i))).or_insert(next);
                }
                cells.len()
            }
        };
        BasisMap { kind, cells, dim }
    }

    fn eval(&self, a: u8, z: &DMatrix<f64>, i: usize) -> DVector<f64> {
        let mut phi = DVector::zeros(self.dim);
        match self.kind {
            RieszBasis::Linear => {
                let p = z.ncols();
                let af = f64::from(a);
                phi[0] = 1.0;
                phi[p + 1] = af;
                for j in 0..p {
                    phi[1 + j] = z[(i, j)];
                    phi[p + 2 + j] = af * z[(i, j)];
                }
            }
            RieszBasis::Saturated => {
                if let Some(&k) = self.cells.get(&(a, row_key(z, i))) {
                    phi[k] = 1.0;
                }
            }
        }
        phi
    }
}

fn row_key(z: &DMatrix<f64>, i: usize) -> Vec<u64> {
    z.row(i).iter().map(|v| v.to_bits()).collect()
}

/// Fits the representer on the design `features` (one row per unit):
/// `beta = (G + ridge I)^{-1} h` with `G = (1/n) sum phi phi'` at the
/// observed treatment and `h = (1/n) sum_{S=1,V=v} [phi(1,.) - phi(0,.)]`.
pub fn fit_riesz(
    data: &TrialDataset,
    target: &SubgroupTarget,
    features: &DMatrix<f64>,
    basis: RieszBasis,
    ridge: f64,
) -> Result<RieszFit> {
    let n = data.n();
    if features.nrows() != n {
        return Err(Error::Shape("Riesz features need one row per unit".into()));
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge must be >= 0, got {ridge}")));
    }
    let map = BasisMap::new(basis, data.a(), features);
    let k = map.dim;
    let phis: Vec<DVector<f64>> = (0..n).map(|i| map.eval(data.a()[i], features, i)).collect();
    let mut g = DMatrix::zeros(k, k);
    for phi in &phis {
        g.syger(1.0 / n as f64, phi, phi, 1.0);
    }
    let mut h = DVector::zeros(k);
    for &i in &data.masks_unchecked(target.v).trial {
        h += (map.eval(1, features, i) - map.eval(0, features, i)) / n as f64;
    }

    let beta = if h.iter().all(|&x| x == 0.0) {
        DVector::zeros(k)
    } else {
        let mut gr = g.clone();
        for j in 0..k {
            gr[(j, j)] += ridge;
        }
        spd_solve(&gr, &h).ok_or_else(|| {
            Error::RankDeficient(format!("Riesz Gram matrix of size {k} with ridge {ridge}"))
        })?
    };
    let gamma_star: Vec<f64> = phis.iter().map(|phi| phi.dot(&beta)).collect();
    let loss = beta.dot(&(&g * &beta)) - 2.0 * beta.dot(&h);
    Ok(RieszFit { basis, beta: beta.iter().copied().collect(), ridge, gamma_star, loss })
}

/// Weighted estimate with `g` on treated and `-g` on control residuals.
pub fn estimate_autodml(
    data: &TrialDataset,
    target: &SubgroupTarget,
    riesz: &RieszFit,
    m1: &[f64],
    m0: &[f64],
) -> Result<EstimateReport> {
    let masks = data.subgroup_masks(target)?;
    let w0: Vec<f64> = riesz.gamma_star.iter().map(|g| -g).collect();
    let dr = weighted_dr(data, &masks, &riesz.gamma_star, &w0, m1, m0)?;
    report_from_eif("riesz", target, &dr)
}

/// Representer on the propensity view, outcome models on the outcome view.
pub fn run_autodml(
    data: &TrialDataset,
    target: &SubgroupTarget,
    views: &FeatureViews,
    cfg: &RieszConfig,
    seed: u64,
) -> Result<(EstimateReport, RieszFit)> {
    let riesz = fit_riesz(data, target, &views.propensity, cfg.basis, cfg.ridge)?;
    let (m1, m0) = fit_outcome_models(data, views, &cfg.outcome, seed)?;
    Ok((estimate_autodml(data, target, &riesz, &m1, &m0)?, riesz))
}
