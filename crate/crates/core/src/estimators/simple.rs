use super::{report_from_eif, weighted_dr, EstimateReport, NuisanceFits};
use crate::data::{SubgroupTarget, TrialDataset};
use crate::error::{Error, Result};
use crate::inference::sample_variance;

/// Difference in trial arm means within the subgroup, with the unpooled
/// two-sample standard error `sqrt(s1^2/n1 + s0^2/n0)`.
pub fn estimate_naive(data: &TrialDataset, target: &SubgroupTarget) -> Result<EstimateReport> {
    let masks = data.subgroup_masks(target)?;
    let mut arms: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for &i in &masks.trial {
        arms[data.a()[i] as usize].push(data.y()[i]);
    }
    for (a, ys) in arms.iter().enumerate() {
        if ys.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "trial arm a={a} of subgroup {} has {} unit(s); need 2",
                target.v,
                ys.len()
            )));
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let estimate = mean(&arms[1]) - mean(&arms[0]);
    let se = (sample_variance(&arms[1]) / arms[1].len() as f64
        + sample_variance(&arms[0]) / arms[0].len() as f64)
        .sqrt();
    Ok(EstimateReport::new("naive", target, estimate, se, masks.alpha_hat(), None))
}

/// Trial-only doubly robust estimator: inverse-propensity weights on trial
/// residuals plus the outcome-model contrast averaged over the trial
/// subgroup. Needs trial-only fits.
pub fn estimate_cov_adj(
    data: &TrialDataset,
    target: &SubgroupTarget,
    fits: &NuisanceFits,
) -> Result<EstimateReport> {
    if fits.pooled {
        return Err(Error::InvalidArgument("cov-adj expects trial-only nuisance fits".into()));
    }
    let masks = data.subgroup_masks(target)?;
    let s = data.s();
    let w1: Vec<f64> = (0..data.n()).map(|i| if s[i] == 1 { 1.0 / fits.pi[i] } else { 0.0 }).collect();
    let w0: Vec<f64> =
        (0..data.n()).map(|i| if s[i] == 1 { 1.0 / (1.0 - fits.pi[i]) } else { 0.0 }).collect();
    let dr = weighted_dr(data, &masks, &w1, &w0, &fits.m1, &fits.m0)?;
    report_from_eif("cov-adj", target, &dr)
}

/// Doubly robust estimator using external units: weights `eta/pi` on treated
/// and `eta/(1-pi)` on control residuals from every source. Needs pooled
/// fits. The method id is taken from the caller (`dr-glm`, `dr-ranger`).
pub fn estimate_dr(
    data: &TrialDataset,
    target: &SubgroupTarget,
    fits: &NuisanceFits,
    method_id: &str,
) -> Result<EstimateReport> {
    if !fits.pooled {
        return Err(Error::InvalidArgument("the external-data estimator expects pooled fits".into()));
    }
    let masks = data.subgroup_masks(target)?;
    let w1: Vec<f64> = fits.eta.iter().zip(&fits.pi).map(|(e, p)| e / p).collect();
    let w0: Vec<f64> = fits.eta.iter().zip(&fits.pi).map(|(e, p)| e / (1.0 - p)).collect();
    let dr = weighted_dr(data, &masks, &w1, &w0, &fits.m1, &fits.m0)?;
    report_from_eif(method_id, target, &dr)
}
