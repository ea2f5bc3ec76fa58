//! Runs a list of methods over several subgroups of one dataset. Nuisance
//! fits do not depend on the subgroup, so each method fits once and is then
//! evaluated per subgroup.

use serde::{Deserialize, Serialize};

use super::nuisance::fit_outcome_models;
use super::{
    check_method_id, covbal_with_gps, estimate_autodml, estimate_cov_adj, estimate_dr,
    estimate_naive, fit_covbal_gps, fit_nuisances, fit_riesz, report_cdml, CdmlConfig,
    CovbalConfig, DefaultRawFitter, EstimateReport, FeatureViews, NuisanceSpec, RawFitter,
    RieszConfig,
};
use crate::data::{SubgroupTarget, TrialDataset};
use crate::error::Result;
use crate::inference::BootstrapConfig;
use crate::seeds::substream;

/// Learner and solver settings for every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodSettings {
    /// `cov-adj` (trial-only) and `dr-glm` (pooled).
    pub glm: NuisanceSpec,
    /// `dr-ranger`.
    pub ranger: NuisanceSpec,
    pub covbal: CovbalConfig,
    pub riesz: RieszConfig,
    pub cdml: CdmlConfig,
}

impl Default for MethodSettings {
    fn default() -> Self {
        MethodSettings {
            glm: NuisanceSpec::glm(),
            ranger: NuisanceSpec::forest(),
            covbal: CovbalConfig::default(),
            riesz: RieszConfig::default(),
            cdml: CdmlConfig::default(),
        }
    }
}

/// One method on one subgroup. Failures carry the rendered error.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub method: String,
    pub subgroup: i64,
    pub result: std::result::Result<EstimateReport, String>,
}

/// Estimates every `(method, subgroup)` pair, ordered by method and then by
/// subgroup as given. Method `m` draws its randomness from
/// `substream(seed, m)`. Unknown ids fail their cells without stopping the
/// others.
pub fn estimate_methods(
    data: &TrialDataset,
    views: &FeatureViews,
    methods: &[String],
    subgroups: &[i64],
    settings: &MethodSettings,
    seed: u64,
) -> Vec<MethodOutcome> {
    let mut out = Vec::with_capacity(methods.len() * subgroups.len());
    for method in methods {
        let method_seed = substream(seed, method);
        let per_target = match prepare(method, data, views, settings, method_seed) {
            Ok(fitted) => subgroups
                .iter()
                .map(|&v| fitted.evaluate(data, &SubgroupTarget::new(v), views))
                .collect::<Vec<_>>(),
            Err(e) => subgroups.iter().map(|_| Err(e.to_string())).collect(),
        };
        for (&v, result) in subgroups.iter().zip(per_target) {
            out.push(MethodOutcome { method: method.clone(), subgroup: v, result });
        }
    }
    out
}

enum Fitted<'a> {
    Naive,
    CovAdj(super::NuisanceFits),
    Dr(super::NuisanceFits, &'a str),
    Covbal(crate::learners::GpPolyModel, crate::learners::GpPolyModel, &'a CovbalConfig),
    Riesz(Vec<f64>, Vec<f64>, &'a RieszConfig),
    Cdml(super::RawPredictions, BootstrapConfig),
}

fn prepare<'a>(
    method: &'a str,
    data: &TrialDataset,
    views: &FeatureViews,
    settings: &'a MethodSettings,
    seed: u64,
) -> Result<Fitted<'a>> {
    check_method_id(method)?;
    let fitted = match method {
        "naive" => Fitted::Naive,
        "cov-adj" => Fitted::CovAdj(
            fit_nuisances(data, views, &settings.glm, false, seed).map_err(|e| e.in_method(method))?,
        ),
        "dr-glm" | "dr-ranger" => {
            let spec = if method == "dr-glm" { &settings.glm } else { &settings.ranger };
            Fitted::Dr(fit_nuisances(data, views, spec, true, seed).map_err(|e| e.in_method(method))?, method)
        }
        "covbal" => {
            let (gp1, gp0) =
                fit_covbal_gps(data, views, &settings.covbal.kernel).map_err(|e| e.in_method(method))?;
            Fitted::Covbal(gp1, gp0, &settings.covbal)
        }
        "riesz" => {
            let (m1, m0) = fit_outcome_models(data, views, &settings.riesz.outcome, seed)
                .map_err(|e| e.in_method(method))?;
            Fitted::Riesz(m1, m0, &settings.riesz)
        }
        "cdml" => {
            let cfg = &settings.cdml;
            let fitter = DefaultRawFitter { forest: cfg.forest.clone(), logistic_ridge: cfg.logistic_ridge };
            let raw = fitter.fit_raw(data, views, seed).map_err(|e| e.in_method(method))?;
            let bootstrap =
                BootstrapConfig { b: cfg.bootstrap.b, seed: substream(seed ^ cfg.bootstrap.seed, "bootstrap") };
            Fitted::Cdml(raw, bootstrap)
        }
        _ => unreachable!("method ids are checked above"),
    };
    Ok(fitted)
}

impl Fitted<'_> {
    fn evaluate(
        &self,
        data: &TrialDataset,
        target: &SubgroupTarget,
        views: &FeatureViews,
    ) -> std::result::Result<EstimateReport, String> {
        let (id, result) = match self {
            Fitted::Naive => ("naive", estimate_naive(data, target)),
            Fitted::CovAdj(fits) => ("cov-adj", estimate_cov_adj(data, target, fits)),
            Fitted::Dr(fits, id) => (*id, estimate_dr(data, target, fits, id)),
            Fitted::Covbal(gp1, gp0, cfg) => (
                "covbal",
                covbal_with_gps(data, target, views, gp1.clone(), gp0.clone(), cfg).map(|f| f.report),
            ),
            Fitted::Riesz(m1, m0, cfg) => (
                "riesz",
                data.subgroup_masks(target)
                    .and_then(|_| fit_riesz(data, target, &views.propensity, cfg.basis, cfg.ridge))
                    .and_then(|fit| estimate_autodml(data, target, &fit, m1, m0)),
            ),
            Fitted::Cdml(raw, bootstrap) => ("cdml", report_cdml(data, target, raw, bootstrap)),
        };
        result.map_err(|e| e.in_method(id).to_string())
    }
}
