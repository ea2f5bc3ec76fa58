//! Finite discrete data-generating processes and the brute-force
//! identification check: the counterfactual subgroup effect among trial
//! units against the observed-data functional
//! `sum_x P(x | v, S=1) [E(Y | A=1, x, v) - E(Y | A=0, x, v)]`, where the
//! outcome regressions pool both sources.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// A finite distribution over real values.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMass {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

impl PointMass {
    pub fn new(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if values.len() != probs.len() || values.is_empty() {
            return Err(Error::Shape("point mass needs matching, nonempty values and probs".into()));
        }
        if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument("point-mass probabilities must lie in [0,1] and sum to 1".into()));
        }
        Ok(PointMass { values, probs })
    }

    pub fn constant(value: f64) -> Self {
        PointMass { values: vec![value], probs: vec![1.0] }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.probs).map(|(v, p)| v * p).sum()
    }
}

/// One covariate cell `(x, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteCell {
    pub x: i64,
    pub v: i64,
    /// `P(X=x, V=v)`.
    pub prob: f64,
    /// `P(S=1 | x, v)`.
    pub p_trial: f64,
    /// `P(A=1 | x, v, S=s)` indexed by `s`.
    pub p_treat: [f64; 2],
    /// Law of `Y(a)` given `(x, v, S=s, A=t)`, indexed `[s][t][a]`.
    pub potential: [[[PointMass; 2]; 2]; 2],
}

impl DiscreteCell {
    /// A cell where `Y(a)` does not depend on source or treatment received.
    pub fn exchangeable(x: i64, v: i64, prob: f64, p_trial: f64, p_treat: [f64; 2], y0: PointMass, y1: PointMass) -> Self {
        let arm = [y0, y1];
        let by_t = [arm.clone(), arm];
        DiscreteCell { x, v, prob, p_trial, p_treat, potential: [by_t.clone(), by_t] }
    }

    /// `P(S=s | x, v)`.
    pub fn p_source(&self, s: usize) -> f64 {
        if s == 1 {
            self.p_trial
        } else {
            1.0 - self.p_trial
        }
    }

    /// `P(A=t | x, v, S=s)`.
    pub fn p_arm(&self, s: usize, t: usize) -> f64 {
        if t == 1 {
            self.p_treat[s]
        } else {
            1.0 - self.p_treat[s]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDgp {
    pub cells: Vec<DiscreteCell>,
}

impl DiscreteDgp {
    pub fn new(cells: Vec<DiscreteCell>) -> Result<Self> {
        let total: f64 = cells.iter().map(|c| c.prob).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("cell probabilities sum to {total}, not 1")));
        }
        for c in &cells {
            let ps = [c.prob, c.p_trial, c.p_treat[0], c.p_treat[1]];
            if ps.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidArgument(format!("cell (x={}, v={}) has a probability outside [0,1]", c.x, c.v)));
            }
        }
        Ok(DiscreteDgp { cells })
    }
}

/// Both sides of the identification identity for one subgroup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentificationResult {
    /// `E[Y(1) - Y(0) | V=v, S=1]`.
    pub truth: f64,
    /// The observed-data functional.
    pub identified: f64,
}

/// Evaluates truth and identification formula for every subgroup with
/// trial mass. Errors name the first cell with trial mass in which an arm
/// is never observed.
pub fn discrete_identification_oracle(dgp: &DiscreteDgp) -> Result<BTreeMap<i64, IdentificationResult>> {
    let mut trial_mass: BTreeMap<i64, f64> = BTreeMap::new();
    let mut truth: BTreeMap<i64, f64> = BTreeMap::new();
    let mut identified: BTreeMap<i64, f64> = BTreeMap::new();
    for c in &dgp.cells {
        let w = c.prob * c.p_trial;
        if w == 0.0 {
            continue;
        }
        *trial_mass.entry(c.v).or_default() += w;
        let mut effect = 0.0;
        for t in 0..2 {
            let pt = c.p_arm(1, t);
            effect += pt * (c.potential[1][t][1].mean() - c.potential[1][t][0].mean());
        }
        *truth.entry(c.v).or_default() += w * effect;

        let mut regression = [0.0; 2];
        for (a, reg) in regression.iter_mut().enumerate() {
            let mass: f64 = (0..2).map(|s| c.p_source(s) * c.p_arm(s, a)).sum();
            if mass == 0.0 {
                return Err(Error::PositivityViolation(format!("(x={}, v={}, a={a})", c.x, c.v)));
            }
            *reg = (0..2)
                .map(|s| c.p_source(s) * c.p_arm(s, a) * c.potential[s][a][a].mean())
                .sum::<f64>()
                / mass;
        }
        *identified.entry(c.v).or_default() += w * (regression[1] - regression[0]);
    }
    Ok(trial_mass
        .into_iter()
        .map(|(v, m)| (v, IdentificationResult { truth: truth[&v] / m, identified: identified[&v] / m }))
        .collect())
}
