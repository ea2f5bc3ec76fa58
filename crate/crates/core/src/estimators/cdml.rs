//! Calibrated DML. Raw nuisance predictions (forest outcome models,
//! logistic treatment and source models) are fitted once; calibration and
//! estimation then run on the rows they are attached to, which is what the
//! bootstrap resamples.
//!
//! Calibration maps, each an isotonic regression applied to the raw values:
//! `pi` against `A`; `1 - pi` against `1 - A`; `eta` against `S`; `m(1,.)`
//! against `Y` on treated units; `m(0,.)` against `Y` on control units.

use serde::{Deserialize, Serialize};

use super::{
    fit_nuisances, report_from_eif, weighted_dr, EstimateReport, FeatureViews, NuisanceSpec,
    OutcomeLearner, PropensityLearner, WeightedDr,
};
use crate::data::{SubgroupTarget, TrialDataset};
use crate::error::{Error, Result};
use crate::inference::{bootstrap_cdml_se, BootstrapConfig, wald_summary};
use crate::learners::{apply_calibration, calibrate_predictions, fit_isotonic, CalibrationKind, ForestParams};
use crate::seeds::substream;

/// Uncalibrated predictions attached to each row.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPredictions {
    pub m1: Vec<f64>,
    pub m0: Vec<f64>,
    pub pi: Vec<f64>,
    pub eta: Vec<f64>,
}

impl RawPredictions {
    pub fn select(&self, idx: &[usize]) -> Self {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect();
        RawPredictions { m1: pick(&self.m1), m0: pick(&self.m0), pi: pick(&self.pi), eta: pick(&self.eta) }
    }
}

/// Produces the raw predictions. Called exactly once per estimate; the
/// bootstrap never refits.
pub trait RawFitter {
    fn fit_raw(&self, data: &TrialDataset, views: &FeatureViews, seed: u64) -> Result<RawPredictions>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CdmlConfig {
    pub forest: ForestParams,
    pub logistic_ridge: f64,
    pub bootstrap: BootstrapConfig,
}

impl Default for CdmlConfig {
    fn default() -> Self {
        CdmlConfig { forest: ForestParams::default(), logistic_ridge: 0.0, bootstrap: BootstrapConfig::default() }
    }
}

/// Forest outcome models per arm and logistic `pi`, `eta`, all on pooled
/// data.
#[derive(Debug, Clone, PartialEq)]
pub struct DefaultRawFitter {
    pub forest: ForestParams,
    pub logistic_ridge: f64,
}

impl RawFitter for DefaultRawFitter {
    fn fit_raw(&self, data: &TrialDataset, views: &FeatureViews, seed: u64) -> Result<RawPredictions> {
        let spec = NuisanceSpec {
            outcome: OutcomeLearner::Forest(self.forest.clone()),
            propensity: PropensityLearner::Logistic { ridge: self.logistic_ridge, max_iter: 100, tol: 1e-8 },
        };
        let f = fit_nuisances(data, views, &spec, true, seed)?;
        Ok(RawPredictions { m1: f.m1, m0: f.m0, pi: f.pi, eta: f.eta })
    }
}

/// Calibration followed by the weighted estimate with weights
/// `eta*/pi*` and `eta*/(1-pi)*`.
pub fn cdml_from_raw(
    data: &TrialDataset,
    target: &SubgroupTarget,
    raw: &RawPredictions,
) -> Result<WeightedDr> {
    let n = data.n();
    if [raw.m1.len(), raw.m0.len(), raw.pi.len(), raw.eta.len()].iter().any(|&l| l != n) {
        return Err(Error::Shape("raw predictions need one value per unit".into()));
    }
    let masks = data.subgroup_masks(target)?;
    let a: Vec<f64> = data.a().iter().map(|&x| f64::from(x)).collect();
    let not_a: Vec<f64> = a.iter().map(|x| 1.0 - x).collect();
    let not_pi: Vec<f64> = raw.pi.iter().map(|p| 1.0 - p).collect();

    let pi_cal = calibrate_predictions(&raw.pi, &a, CalibrationKind::Probability)?;
    let not_pi_cal = calibrate_predictions(&not_pi, &not_a, CalibrationKind::Probability)?;
    let eta_cal = if data.n_external() == 0 {
        vec![1.0; n]
    } else {
        let s: Vec<f64> = data.s().iter().map(|&x| f64::from(x)).collect();
        calibrate_predictions(&raw.eta, &s, CalibrationKind::Probability)?
    };
    let calibrate_arm = |m: &[f64], arm: u8| -> Result<Vec<f64>> {
        let idx: Vec<usize> = (0..n).filter(|&i| data.a()[i] == arm).collect();
        if idx.is_empty() {
            return Err(Error::InsufficientData(format!("no units with A={arm} to calibrate")));
        }
        let pred: Vec<f64> = idx.iter().map(|&i| m[i]).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| data.y()[i]).collect();
        let fit = fit_isotonic(&pred, &ys, &vec![1.0; idx.len()])?;
        Ok(apply_calibration(&fit, m, CalibrationKind::Real))
    };
    let m1 = calibrate_arm(&raw.m1, 1)?;
    let m0 = calibrate_arm(&raw.m0, 0)?;

    let w1: Vec<f64> = eta_cal.iter().zip(&pi_cal).map(|(e, p)| e / p).collect();
    let w0: Vec<f64> = eta_cal.iter().zip(&not_pi_cal).map(|(e, p)| e / p).collect();
    weighted_dr(data, &masks, &w1, &w0, &m1, &m0)
}

/// Point estimate from `raw` with the bootstrap standard error and a Wald
/// interval built on it.
pub fn report_cdml(
    data: &TrialDataset,
    target: &SubgroupTarget,
    raw: &RawPredictions,
    bootstrap: &BootstrapConfig,
) -> Result<EstimateReport> {
    let point = cdml_from_raw(data, target, raw)?;
    let se = bootstrap_cdml_se(data, target, raw, bootstrap)?;
    let mut report = report_from_eif("cdml", target, &point)?;
    let w = wald_summary(point.estimate, se);
    report.se = se;
    report.ci_low = w.ci_low;
    report.ci_high = w.ci_high;
    report.p_value = w.p_value;
    Ok(report)
}

/// Full pipeline with a caller-supplied raw fitter. The bootstrap stream is
/// derived from `seed` and `cfg.bootstrap.seed`.
pub fn estimate_cdml_with(
    data: &TrialDataset,
    target: &SubgroupTarget,
    views: &FeatureViews,
    fitter: &dyn RawFitter,
    cfg: &CdmlConfig,
    seed: u64,
) -> Result<EstimateReport> {
    data.subgroup_masks(target)?;
    let raw = fitter.fit_raw(data, views, seed)?;
    let bootstrap = BootstrapConfig {
        b: cfg.bootstrap.b,
        seed: substream(seed ^ cfg.bootstrap.seed, "bootstrap"),
    };
    report_cdml(data, target, &raw, &bootstrap)
}

pub fn estimate_cdml(
    data: &TrialDataset,
    target: &SubgroupTarget,
    views: &FeatureViews,
    cfg: &CdmlConfig,
    seed: u64,
) -> Result<EstimateReport> {
    let fitter = DefaultRawFitter { forest: cfg.forest.clone(), logistic_ridge: cfg.logistic_ridge };
    estimate_cdml_with(data, target, views, &fitter, cfg, seed)
}
