//! The three simulation designs. Every generator consumes one `ChaCha20`
//! stream seeded from its `seed`, drawing whole columns in step order:
//! covariate, subgroup, source, treatment, noise. Bernoulli draws compare a
//! uniform `[0,1)` variate against the probability.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{PositivityDiagnostics, TrialDataset};
use crate::error::{Error, Result};
use crate::estimators::FeatureViews;
use crate::learners::fit_logistic_irls;

/// True subgroup effects shared by all three designs.
pub fn truth_map() -> BTreeMap<i64, f64> {
    BTreeMap::from([(0, -0.5), (1, 0.5)])
}

fn expit(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Intercept `C` with `mean_i expit(C - 0.5 x_i - 1.2 v_i) = target`, by
/// bisection on `[-50, 50]`.
pub fn solve_intercept_c(xtilde: &[f64], v: &[f64], target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::InvalidArgument(format!("target proportion {target} not in (0,1)")));
    }
    if xtilde.len() != v.len() || xtilde.is_empty() {
        return Err(Error::Shape("intercept solver needs equal, nonempty x and v".into()));
    }
    let mean_eta = |c: f64| {
        xtilde.iter().zip(v).map(|(x, v)| expit(c - 0.5 * x - 1.2 * v)).sum::<f64>()
            / xtilde.len() as f64
    };
    let (mut lo, mut hi) = (-50.0f64, 50.0f64);
    if !(mean_eta(lo) < target && mean_eta(hi) > target) {
        return Err(Error::Generation(format!("target proportion {target} not bracketed by C in [-50, 50]")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if mean_eta(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Which nuisance models see the transformed covariate in Scenario 3.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Misspec {
    /// Source and treatment models (`eta`, `pi`).
    pub data_treatment: bool,
    /// Outcome models.
    pub outcome: bool,
}

impl Misspec {
    pub const CELLS: [Misspec; 4] = [
        Misspec { data_treatment: false, outcome: false },
        Misspec { data_treatment: true, outcome: false },
        Misspec { data_treatment: false, outcome: true },
        Misspec { data_treatment: true, outcome: true },
    ];

    pub fn label(&self) -> &'static str {
        match (self.data_treatment, self.outcome) {
            (false, false) => "all-correct",
            (true, false) => "data-treatment-miss",
            (false, true) => "outcome-miss",
            (true, true) => "all-miss",
        }
    }
}

/// `sin(w / (w + 1) + 2)`.
pub fn sine_transform(w: f64) -> f64 {
    (w / (w + 1.0) + 2.0).sin()
}

/// A simulated dataset with its counterfactuals.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub dataset: TrialDataset,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub truth: BTreeMap<i64, f64>,
    /// Designs on which the nuisance models are fitted.
    pub views: FeatureViews,
    /// Fitted-probability overlap diagnostics (Scenario 2 only).
    pub diagnostics: Option<PositivityDiagnostics>,
    /// Datasets drawn before one was accepted (1 unless rejection sampling).
    pub attempts: usize,
}

struct Draw {
    x: Vec<f64>,
    v: Vec<f64>,
    s: Vec<u8>,
    a: Vec<u8>,
    y0: Vec<f64>,
    y1: Vec<f64>,
}

impl Draw {
    fn into_dataset(self) -> Result<(TrialDataset, Vec<f64>, Vec<f64>)> {
        let n = self.x.len();
        let y: Vec<f64> =
            (0..n).map(|i| if self.a[i] == 1 { self.y1[i] } else { self.y0[i] }).collect();
        let v: Vec<i64> = self.v.iter().map(|&v| v as i64).collect();
        let ds = TrialDataset::new(y, self.a, self.s, v, DMatrix::from_column_slice(n, 1, &self.x))?;
        Ok((ds, self.y0, self.y1))
    }
}

fn bernoulli(rng: &mut ChaCha20Rng, p: f64) -> bool {
    rng.random::<f64>() < p
}

/// Shared tail of every design: source from `eta`, treatment (fair coin in
/// the trial, `external_pi` outside), outcomes `Y(0) = 1.5 x + 0.5 v + e`,
/// `Y(1) = Y(0) + v - 0.5`.
fn finish_draw(
    rng: &mut ChaCha20Rng,
    x: Vec<f64>,
    v: Vec<f64>,
    eta: &[f64],
    external_pi: impl Fn(f64, f64) -> f64,
) -> Draw {
    let n = x.len();
    let s: Vec<u8> = eta.iter().map(|&e| u8::from(bernoulli(rng, e))).collect();
    let a: Vec<u8> = (0..n)
        .map(|i| {
            let p = if s[i] == 1 { 0.5 } else { external_pi(x[i], v[i]) };
            u8::from(bernoulli(rng, p))
        })
        .collect();
    let y0: Vec<f64> = (0..n)
        .map(|i| {
            let e: f64 = rng.sample(StandardNormal);
            1.5 * x[i] + 0.5 * v[i] + e
        })
        .collect();
    let y1 = (0..n).map(|i| y0[i] + v[i] - 0.5).collect();
    Draw { x, v, s, a, y0, y1 }
}

fn draw_covariates(rng: &mut ChaCha20Rng, n: usize, avoid_minus_one: bool) -> (Vec<f64>, Vec<f64>) {
    let x = (0..n)
        .map(|_| loop {
            let w: f64 = rng.sample(StandardNormal);
            if !(avoid_minus_one && w == -1.0) {
                break w;
            }
        })
        .collect();
    let v = (0..n).map(|_| if bernoulli(rng, 0.5) { 1.0 } else { 0.0 }).collect();
    (x, v)
}

/// Scenario 1: `n_trial + n_ext` units with the source-model intercept
/// solved so the expected trial share is `n_trial / (n_trial + n_ext)`;
/// external treatment `expit(0.045 - 0.09 x - 0.09 v)`.
pub fn gen_scenario1(n_trial: usize, n_ext: usize, seed: u64) -> Result<GeneratedData> {
    let n = n_trial + n_ext;
    if n_trial == 0 || n_ext == 0 {
        return Err(Error::InvalidArgument("scenario 1 needs positive trial and external sizes".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (x, v) = draw_covariates(&mut rng, n, false);
    let c = solve_intercept_c(&x, &v, n_trial as f64 / n as f64)?;
    let eta: Vec<f64> = x.iter().zip(&v).map(|(x, v)| expit(c - 0.5 * x - 1.2 * v)).collect();
    let draw = finish_draw(&mut rng, x, v, &eta, |x, v| expit(0.045 - 0.09 * x - 0.09 * v));
    let (dataset, y0, y1) = draw.into_dataset()?;
    let views = FeatureViews::from_data(&dataset);
    Ok(GeneratedData { dataset, y0, y1, truth: truth_map(), views, diagnostics: None, attempts: 1 })
}

/// Maximum number of datasets drawn by the Scenario 2 rejection loop.
pub const SCENARIO2_MAX_ATTEMPTS: usize = 10_000;

/// Scenario 2: `n` units with trial probability 0.0909 and external
/// treatment `expit(0.045 - 9 w - 9 v)`. Datasets are redrawn until the
/// fitted ratio `max_i eta_hat_i / pi_hat_i` (logistic fits of `S` and of `A`
/// on `(w, v)` over all units) exceeds `threshold`.
pub fn gen_scenario2(n: usize, threshold: f64, seed: u64) -> Result<GeneratedData> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for attempt in 1..=SCENARIO2_MAX_ATTEMPTS {
        let (x, v) = draw_covariates(&mut rng, n, false);
        let eta = vec![0.0909; n];
        let draw = finish_draw(&mut rng, x, v, &eta, |w, v| expit(0.045 - 9.0 * w - 9.0 * v));
        let (dataset, y0, y1) = draw.into_dataset()?;
        let Some(diag) = scenario2_diagnostics(&dataset) else {
            continue;
        };
        if diag.max_ratio > threshold {
            let views = FeatureViews::from_data(&dataset);
            return Ok(GeneratedData {
                dataset,
                y0,
                y1,
                truth: truth_map(),
                views,
                diagnostics: Some(diag),
                attempts: attempt,
            });
        }
    }
    Err(Error::Generation(format!(
        "no scenario 2 dataset with max eta/pi > {threshold} in {SCENARIO2_MAX_ATTEMPTS} attempts"
    )))
}

/// Logistic `eta_hat`, `pi_hat` on `(w, v)` over all units and their overlap
/// diagnostics; `None` if a label column is constant.
pub fn scenario2_diagnostics(data: &TrialDataset) -> Option<PositivityDiagnostics> {
    let design = data.design();
    let s: Vec<f64> = data.s().iter().map(|&x| f64::from(x)).collect();
    let a: Vec<f64> = data.a().iter().map(|&x| f64::from(x)).collect();
    for labels in [&s, &a] {
        if labels.iter().all(|&l| l == labels[0]) {
            return None;
        }
    }
    let eta = fit_logistic_irls(&design, &s, 0.0, 100, 1e-8).ok()?.predict(&design);
    let pi = fit_logistic_irls(&design, &a, 0.0, 100, 1e-8).ok()?.predict(&design);
    Some(PositivityDiagnostics::new(data, &pi, &eta))
}

/// Scenario 3: `n` units with trial probability `expit(1 - 0.5 w - 1.2 v)`
/// and the Scenario 1 treatment and outcome models. The flagged nuisance
/// views use `z = sin(w / (w + 1) + 2)` in place of `w`.
pub fn gen_scenario3(n: usize, misspec: Misspec, seed: u64) -> Result<GeneratedData> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (x, v) = draw_covariates(&mut rng, n, true);
    let eta: Vec<f64> = x.iter().zip(&v).map(|(w, v)| expit(1.0 - 0.5 * w - 1.2 * v)).collect();
    let draw = finish_draw(&mut rng, x, v, &eta, |w, v| expit(0.045 - 0.09 * w - 0.09 * v));
    let (dataset, y0, y1) = draw.into_dataset()?;
    let raw = dataset.design();
    let transformed = DMatrix::from_fn(n, 2, |i, j| if j == 0 { sine_transform(raw[(i, 0)]) } else { raw[(i, 1)] });
    let pick = |flag: bool| if flag { transformed.clone() } else { raw.clone() };
    let views = FeatureViews { outcome: pick(misspec.outcome), propensity: pick(misspec.data_treatment) };
    Ok(GeneratedData { dataset, y0, y1, truth: truth_map(), views, diagnostics: None, attempts: 1 })
}
