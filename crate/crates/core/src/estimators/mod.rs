//! Subgroup treatment-effect estimators for a trial augmented with external
//! controls and treated units.
//!
//! Every estimator except `naive` evaluates the same weighted sum over the
//! `n` pooled units,
//!
//! ```text
//! theta = 1/(n alpha) * sum_i [ 1(A=1,V=v) w1_i (Y_i - m1_i)
//!                             - 1(A=0,V=v) w0_i (Y_i - m0_i)
//!                             + 1(V=v,S=1) (m1_i - m0_i) ]
//! ```
//!
//! with `alpha` the fraction of units in the trial subgroup. The methods
//! differ only in how the weights and outcome models are produced.

mod balance;
mod cdml;
mod dispatch;
mod nuisance;
mod riesz;
mod simple;

pub use balance::{
    build_balance_problem, covbal_with_gps, estimate_covbal, fit_covbal_gps, run_covbal, solve_balance_weights, BalanceProblem,
    BalanceWeights, CovbalConfig, CovbalFit, QuadForm,
};
pub use cdml::{
    cdml_from_raw, estimate_cdml, estimate_cdml_with, report_cdml, CdmlConfig, DefaultRawFitter,
    RawFitter, RawPredictions,
};
pub use dispatch::{estimate_methods, MethodOutcome, MethodSettings};
pub use nuisance::{
    fit_nuisances, FeatureViews, NuisanceFits, NuisanceSpec, OutcomeLearner, PropensityLearner,
};
pub use riesz::{estimate_autodml, fit_riesz, run_autodml, RieszBasis, RieszConfig, RieszFit};
pub use simple::{estimate_cov_adj, estimate_dr, estimate_naive};

use serde::Serialize;

use crate::data::{SubgroupMasks, SubgroupTarget, TrialDataset};
use crate::error::{Error, Result};
use crate::inference::{se_from_eif, wald_summary, EifContributions};

/// Point estimate with its standard error, 95% Wald interval and p-value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub method_id: String,
    pub subgroup: i64,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub alpha_hat: f64,
    /// Largest absolute weight applied to a residual; `None` for methods
    /// without weights.
    pub max_weight: Option<f64>,
    /// Solver or fit warnings (non-convergence and similar).
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl EstimateReport {
    pub fn new(
        method_id: &str,
        target: &SubgroupTarget,
        estimate: f64,
        se: f64,
        alpha_hat: f64,
        max_weight: Option<f64>,
    ) -> Self {
        let w = wald_summary(estimate, se);
        EstimateReport {
            method_id: method_id.to_string(),
            subgroup: target.v,
            estimate,
            se,
            ci_low: w.ci_low,
            ci_high: w.ci_high,
            p_value: w.p_value,
            alpha_hat,
            max_weight,
            warnings: Vec::new(),
        }
    }
}

/// Point estimate of the weighted sum plus its influence-function values.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDr {
    pub estimate: f64,
    pub eif: EifContributions,
    pub alpha_hat: f64,
    pub max_weight: f64,
}

/// Evaluates the weighted sum and the per-unit influence values
///
/// ```text
/// phi_i = [ 1(A=1,V=v) w1_i (Y_i - m1_i) - 1(A=0,V=v) w0_i (Y_i - m0_i)
///           + 1(V=v,S=1) (m1_i - m0_i - theta) ] / alpha
/// ```
///
/// which average to zero at `theta`. Weight entries outside the
/// corresponding arm of the subgroup are ignored.
pub fn weighted_dr(
    data: &TrialDataset,
    masks: &SubgroupMasks,
    w1: &[f64],
    w0: &[f64],
    m1: &[f64],
    m0: &[f64],
) -> Result<WeightedDr> {
    let n = data.n();
    for (name, len) in [("w1", w1.len()), ("w0", w0.len()), ("m1", m1.len()), ("m0", m0.len())] {
        if len != n {
            return Err(Error::Shape(format!("{name} has length {len}, expected {n}")));
        }
    }
    if masks.trial.is_empty() {
        return Err(Error::InsufficientData("no trial units in the subgroup".into()));
    }
    let y = data.y();
    let alpha = masks.alpha_hat();
    let mut phi = vec![0.0; n];
    let mut max_weight = 0.0f64;
    for &i in &masks.treated {
        phi[i] += w1[i] * (y[i] - m1[i]);
        max_weight = max_weight.max(w1[i].abs());
    }
    for &i in &masks.control {
        phi[i] -= w0[i] * (y[i] - m0[i]);
        max_weight = max_weight.max(w0[i].abs());
    }
    for &i in &masks.trial {
        phi[i] += m1[i] - m0[i];
    }
    let estimate = phi.iter().sum::<f64>() / (n as f64 * alpha);
    for &i in &masks.trial {
        phi[i] -= estimate;
    }
    for p in phi.iter_mut() {
        *p /= alpha;
    }
    if !estimate.is_finite() {
        return Err(Error::InvalidArgument("weighted estimate is not finite".into()));
    }
    Ok(WeightedDr { estimate, eif: EifContributions { values: phi }, alpha_hat: alpha, max_weight })
}

pub(crate) fn report_from_eif(
    method_id: &str,
    target: &SubgroupTarget,
    dr: &WeightedDr,
) -> Result<EstimateReport> {
    let se = se_from_eif(&dr.eif)?;
    Ok(EstimateReport::new(method_id, target, dr.estimate, se, dr.alpha_hat, Some(dr.max_weight)))
}

/// Method ids accepted by the harness.
pub const METHOD_IDS: [&str; 7] = ["naive", "cov-adj", "dr-glm", "dr-ranger", "covbal", "riesz", "cdml"];

/// Recognized but unsupported method ids.
pub const OUT_OF_SCOPE_METHOD_IDS: [&str; 2] = ["dr-bart", "dr-bayglm"];

/// Checks a method id: unknown ids list the valid ones, out-of-scope ids
/// say so explicitly.
pub fn check_method_id(id: &str) -> Result<()> {
    if METHOD_IDS.contains(&id) {
        Ok(())
    } else if OUT_OF_SCOPE_METHOD_IDS.contains(&id) {
        Err(Error::OutOfScope(id.to_string()))
    } else {
        Err(Error::UnknownMethod(id.to_string()))
    }
}
