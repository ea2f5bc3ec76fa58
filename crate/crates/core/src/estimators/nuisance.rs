use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::learners::{
    clip_probability, fit_forest, fit_logistic_irls, fit_ols, ForestMode, ForestParams,
};
use crate::seeds::substream;

/// Design matrices the nuisance models are fitted on. Both default to
/// `[x~ | v]`; a misspecified analysis swaps in transformed columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureViews {
    /// For the outcome models `m(a, .)`.
    pub outcome: DMatrix<f64>,
    /// For the treatment and source models `pi`, `eta`.
    pub propensity: DMatrix<f64>,
}

impl FeatureViews {
    pub fn from_data(data: &TrialDataset) -> Self {
        let d = data.design();
        FeatureViews { outcome: d.clone(), propensity: d }
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        FeatureViews { outcome: self.outcome.select_rows(idx), propensity: self.propensity.select_rows(idx) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OutcomeLearner {
    Ols {
        #[serde(default)]
        ridge: f64,
    },
    Forest(ForestParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PropensityLearner {
    Logistic {
        #[serde(default)]
        ridge: f64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
        #[serde(default = "default_tol")]
        tol: f64,
    },
    Forest(ForestParams),
}

fn default_max_iter() -> usize {
    100
}

fn default_tol() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuisanceSpec {
    pub outcome: OutcomeLearner,
    pub propensity: PropensityLearner,
}

impl NuisanceSpec {
    /// OLS outcome models, logistic treatment and source models.
    pub fn glm() -> Self {
        NuisanceSpec {
            outcome: OutcomeLearner::Ols { ridge: 0.0 },
            propensity: PropensityLearner::Logistic {
                ridge: 0.0,
                max_iter: default_max_iter(),
                tol: default_tol(),
            },
        }
    }

    /// Random forests for every nuisance.
    pub fn forest() -> Self {
        NuisanceSpec {
            outcome: OutcomeLearner::Forest(ForestParams::default()),
            propensity: PropensityLearner::Forest(ForestParams::default()),
        }
    }

    pub fn id(&self) -> String {
        let o = match self.outcome {
            OutcomeLearner::Ols { .. } => "ols",
            OutcomeLearner::Forest(_) => "forest",
        };
        let p = match self.propensity {
            PropensityLearner::Logistic { .. } => "logistic",
            PropensityLearner::Forest(_) => "forest",
        };
        format!("{o}/{p}")
    }
}

/// Fitted nuisance values at every unit.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceFits {
    pub m1: Vec<f64>,
    pub m0: Vec<f64>,
    /// `P(A=1 | x~, v)`, clipped.
    pub pi: Vec<f64>,
    /// `P(S=1 | x~, v)`, clipped, except that it is exactly 1 when every unit
    /// is a trial unit (and unused by trial-only fits).
    pub eta: Vec<f64>,
    pub learner_id: String,
    /// Fitted on all units (`true`) or on trial units only.
    pub pooled: bool,
}

impl NuisanceFits {
    pub fn select(&self, idx: &[usize]) -> Self {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect();
        NuisanceFits {
            m1: pick(&self.m1),
            m0: pick(&self.m0),
            pi: pick(&self.pi),
            eta: pick(&self.eta),
            learner_id: self.learner_id.clone(),
            pooled: self.pooled,
        }
    }
}

/// Fits `m(1,.)`, `m(0,.)`, `pi` and `eta`. With `pooled` the models use all
/// units (outcome models per arm); otherwise only trial units, and `eta` is
/// set to 1.
pub fn fit_nuisances(
    data: &TrialDataset,
    views: &FeatureViews,
    spec: &NuisanceSpec,
    pooled: bool,
    seed: u64,
) -> Result<NuisanceFits> {
    let n = data.n();
    if views.outcome.nrows() != n || views.propensity.nrows() != n {
        return Err(Error::Shape("feature views must have one row per unit".into()));
    }
    let base: Vec<usize> = (0..n).filter(|&i| pooled || data.s()[i] == 1).collect();
    let arm = |a: u8| -> Vec<usize> { base.iter().copied().filter(|&i| data.a()[i] == a).collect() };

    let m1 = fit_outcome(data, &views.outcome, &arm(1), &spec.outcome, substream(seed, "m1"))?;
    let m0 = fit_outcome(data, &views.outcome, &arm(0), &spec.outcome, substream(seed, "m0"))?;
    let a_labels: Vec<f64> = data.a().iter().map(|&a| f64::from(a)).collect();
    let pi = fit_probability(&views.propensity, &a_labels, &base, &spec.propensity, substream(seed, "pi"))?;
    let eta = if !pooled || data.n_external() == 0 {
        vec![1.0; n]
    } else {
        let s_labels: Vec<f64> = data.s().iter().map(|&s| f64::from(s)).collect();
        fit_probability(&views.propensity, &s_labels, &base, &spec.propensity, substream(seed, "eta"))?
    };
    Ok(NuisanceFits { m1, m0, pi, eta, learner_id: spec.id(), pooled })
}

/// Per-arm outcome models on all units, predicted at every unit.
pub(crate) fn fit_outcome_models(
    data: &TrialDataset,
    views: &FeatureViews,
    learner: &OutcomeLearner,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let arm = |a: u8| -> Vec<usize> { (0..data.n()).filter(|&i| data.a()[i] == a).collect() };
    let m1 = fit_outcome(data, &views.outcome, &arm(1), learner, substream(seed, "m1"))?;
    let m0 = fit_outcome(data, &views.outcome, &arm(0), learner, substream(seed, "m0"))?;
    Ok((m1, m0))
}

fn fit_outcome(
    data: &TrialDataset,
    x: &DMatrix<f64>,
    rows: &[usize],
    learner: &OutcomeLearner,
    seed: u64,
) -> Result<Vec<f64>> {
    if rows.is_empty() {
        return Err(Error::InsufficientData("an arm has no units to fit an outcome model".into()));
    }
    let xs = x.select_rows(rows);
    let ys: Vec<f64> = rows.iter().map(|&i| data.y()[i]).collect();
    match learner {
        OutcomeLearner::Ols { ridge } => Ok(fit_ols(&xs, &ys, *ridge)?.predict(x)),
        OutcomeLearner::Forest(params) => {
            Ok(fit_forest(&xs, &ys, ForestMode::Regression, params, seed)?.predict(x))
        }
    }
}

fn fit_probability(
    x: &DMatrix<f64>,
    labels: &[f64],
    rows: &[usize],
    learner: &PropensityLearner,
    seed: u64,
) -> Result<Vec<f64>> {
    let ls: Vec<f64> = rows.iter().map(|&i| labels[i]).collect();
    if ls.is_empty() {
        return Err(Error::InsufficientData("no units to fit a probability model".into()));
    }
    if ls.iter().all(|&l| l == ls[0]) {
        return Ok(vec![clip_probability(ls[0]); x.nrows()]);
    }
    let xs = x.select_rows(rows);
    match learner {
        PropensityLearner::Logistic { ridge, max_iter, tol } => {
            Ok(fit_logistic_irls(&xs, &ls, *ridge, *max_iter, *tol)?.predict(x))
        }
        PropensityLearner::Forest(params) => {
            Ok(fit_forest(&xs, &ls, ForestMode::Probability, params, seed)?.predict(x))
        }
    }
}
