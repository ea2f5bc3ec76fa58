//! Standard errors, Wald intervals and tests, and the row bootstrap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data::{SubgroupTarget, TrialDataset};
use crate::error::{Error, Result};
use crate::estimators::{cdml_from_raw, RawPredictions};
use crate::seeds::derive_seed;

/// Upper 0.975 quantile of the standard normal.
pub const Z_975: f64 = 1.959963984540054;

/// Per-unit influence-function values evaluated at the point estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct EifContributions {
    pub values: Vec<f64>,
}

impl EifContributions {
    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.n() as f64
    }
}

/// `sqrt(sample_variance(values) / n)`.
pub fn se_from_eif(contrib: &EifContributions) -> Result<f64> {
    let n = contrib.n();
    if n < 2 {
        return Err(Error::InsufficientData(format!("EIF standard error needs n >= 2, got {n}")));
    }
    Ok((sample_variance(&contrib.values) / n as f64).sqrt())
}

pub(crate) fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WaldSummary {
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
}

/// 95% Wald interval and two-sided p-value for `H0: theta = 0`.
pub fn wald_summary(estimate: f64, se: f64) -> WaldSummary {
    let half = Z_975 * se;
    let p_value = if estimate == 0.0 {
        1.0
    } else if se == 0.0 {
        0.0
    } else {
        // 2 (1 - Phi(|t|)) = erfc(|t| / sqrt 2)
        erfc((estimate / se).abs() / std::f64::consts::SQRT_2)
    };
    WaldSummary { ci_low: estimate - half, ci_high: estimate + half, p_value }
}

/// Whether `truth` lies in the Wald interval; the same as
/// `|estimate - truth| <= Z_975 * se`.
pub fn covers(estimate: f64, se: f64, truth: f64) -> bool {
    (estimate - truth).abs() <= Z_975 * se
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { b: 500, seed: 0 }
    }
}

/// Sample standard deviation of `cfg.b` replicate statistics computed on
/// row resamples. Draw `k` uses the stream `derive_seed(cfg.seed, k)`; a
/// draw rejected by `accept` is replaced by the next draw, up to `10 b`
/// draws in total.
pub fn bootstrap_se(
    n: usize,
    cfg: &BootstrapConfig,
    mut accept: impl FnMut(&[usize]) -> bool,
    mut statistic: impl FnMut(&[usize]) -> Result<f64>,
) -> Result<f64> {
    if cfg.b < 2 {
        return Err(Error::InvalidArgument(format!("bootstrap needs B >= 2, got {}", cfg.b)));
    }
    let mut stats = Vec::with_capacity(cfg.b);
    let mut idx = vec![0usize; n];
    let max_draws = 10 * cfg.b as u64;
    let mut draw = 0u64;
    while stats.len() < cfg.b {
        if draw == max_draws {
            return Err(Error::InsufficientData(format!(
                "only {} of {} bootstrap replicates usable after {max_draws} draws",
                stats.len(),
                cfg.b
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, draw));
        draw += 1;
        for slot in idx.iter_mut() {
            *slot = rng.random_range(0..n);
        }
        if !accept(&idx) {
            continue;
        }
        stats.push(statistic(&idx)?);
    }
    Ok(sample_variance(&stats).sqrt())
}

/// Bootstrap standard error of the calibrated DML estimate. The raw
/// predictions stay attached to their rows; each replicate resamples rows and
/// reruns only calibration and estimation.
pub fn bootstrap_cdml_se(
    data: &TrialDataset,
    target: &SubgroupTarget,
    raw: &RawPredictions,
    cfg: &BootstrapConfig,
) -> Result<f64> {
    let v = target.v;
    let accept = |idx: &[usize]| {
        let mut seen = [false; 2];
        for &i in idx {
            if data.v()[i] == v && data.s()[i] == 1 {
                seen[data.a()[i] as usize] = true;
            }
        }
        seen[0] && seen[1]
    };
    bootstrap_se(data.n(), cfg, accept, |idx| {
        let sub = data.select(idx);
        let raw_sub = raw.select(idx);
        Ok(cdml_from_raw(&sub, target, &raw_sub)?.estimate)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_contributions() {
        let c = EifContributions { values: vec![2.0; 5] };
        assert_eq!(se_from_eif(&c).unwrap(), 0.0);
    }

    #[test]
    fn two_point_se() {
        let c = EifContributions { values: vec![-1.0, 1.0] };
        assert!((se_from_eif(&c).unwrap() - 1.0).abs() < 1e-15);
        assert!(se_from_eif(&EifContributions { values: vec![1.0] }).is_err());
    }

    #[test]
    fn wald_at_196() {
        let w = wald_summary(1.96, 1.0);
        assert!((w.p_value - 0.05).abs() < 5e-4);
    }

    #[test]
    fn wald_zero_estimate() {
        let w = wald_summary(0.0, 0.7);
        assert_eq!(w.p_value, 1.0);
        assert_eq!(w.ci_low, -w.ci_high);
        assert_eq!(wald_summary(0.3, 0.0).p_value, 0.0);
    }

    #[test]
    fn naive_case_study_interval() {
        let w = wald_summary(1.15, 0.81);
        assert!((w.ci_low - -0.44).abs() < 0.01);
        assert!((w.ci_high - 2.74).abs() < 0.01);
    }

    #[test]
    fn bootstrap_of_constant_statistic() {
        let se = bootstrap_se(10, &BootstrapConfig { b: 20, seed: 1 }, |_| true, |_| Ok(3.0)).unwrap();
        assert_eq!(se, 0.0);
    }

    #[test]
    fn bootstrap_gives_up_after_ten_b_draws() {
        let r = bootstrap_se(10, &BootstrapConfig { b: 5, seed: 1 }, |_| false, |_| Ok(0.0));
        assert!(matches!(r, Err(Error::InsufficientData(_))));
    }
}
