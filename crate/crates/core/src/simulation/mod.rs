//! Monte Carlo designs and the replication runner.
//!
//! Replication `r` of a study draws its data from `derive_seed(seed, r)`.
//! The seed does not depend on the external sample size or the
//! misspecification cell, so every cell of a grid sees common random
//! numbers: the covariate and noise draws of replication `r` line up across
//! cells.

mod discrete;
mod scenarios;

pub use discrete::{
    discrete_identification_oracle, DiscreteCell, DiscreteDgp, IdentificationResult, PointMass,
};
pub use scenarios::{
    gen_scenario1, gen_scenario2, gen_scenario3, scenario2_diagnostics, sine_transform,
    solve_intercept_c, truth_map, GeneratedData, Misspec, SCENARIO2_MAX_ATTEMPTS,
};

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{estimate_methods, MethodSettings};
use crate::inference::covers;
use crate::seeds::derive_seed;

/// Subgroups every replication reports on.
pub const SUBGROUPS: [i64; 2] = [1, 0];

/// One study: a design, its size grid, and the replication count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// 1, 2 or 3.
    pub scenario: u8,
    /// Nominal trial size; defaults 100, 50, 250.
    #[serde(default)]
    pub n_trial: Option<usize>,
    /// Nominal external sizes. Scenario 1 accepts a grid (default
    /// 100, 200, ..., 900); Scenarios 2 and 3 take one value (500, 250).
    #[serde(default)]
    pub n_ext: Option<Vec<usize>>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Scenario 3 only; defaults to all four cells.
    #[serde(default)]
    pub misspec: Option<Vec<Misspec>>,
    /// Scenario 2 only; redraw until `max eta_hat/pi_hat` exceeds this.
    #[serde(default)]
    pub ppv_threshold: Option<f64>,
}

fn default_reps() -> usize {
    100
}

/// One grid point of a study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioCell {
    pub n_trial: usize,
    pub n_ext: usize,
    pub misspec: Option<Misspec>,
}

impl ScenarioConfig {
    pub fn new(scenario: u8, reps: usize, seed: u64) -> Self {
        ScenarioConfig { scenario, n_trial: None, n_ext: None, reps, seed, misspec: None, ppv_threshold: None }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(1..=3).contains(&self.scenario) {
            return bad(format!("scenario must be 1, 2 or 3, got {}", self.scenario));
        }
        if self.reps == 0 {
            return bad("reps must be >= 1".into());
        }
        if self.n_trial == Some(0) {
            return bad("n_trial must be >= 1".into());
        }
        if let Some(grid) = &self.n_ext {
            if grid.is_empty() || grid.contains(&0) {
                return bad("n_ext must be a nonempty list of sizes >= 1".into());
            }
            if self.scenario != 1 && grid.len() > 1 {
                return bad(format!("scenario {} takes a single n_ext", self.scenario));
            }
        }
        if self.misspec.is_some() && self.scenario != 3 {
            return bad("misspec applies to scenario 3 only".into());
        }
        if matches!(&self.misspec, Some(m) if m.is_empty()) {
            return bad("misspec must list at least one cell".into());
        }
        match self.ppv_threshold {
            Some(_) if self.scenario != 2 => bad("ppv_threshold applies to scenario 2 only".into()),
            Some(t) if !(t > 0.0) => bad(format!("ppv_threshold must be positive, got {t}")),
            _ => Ok(()),
        }
    }

    pub fn cells(&self) -> Vec<ScenarioCell> {
        let (n_trial, grid) = match self.scenario {
            1 => (100, (1..=9).map(|k| 100 * k).collect()),
            2 => (50, vec![500]),
            _ => (250, vec![250]),
        };
        let n_trial = self.n_trial.unwrap_or(n_trial);
        let grid = self.n_ext.clone().unwrap_or(grid);
        let misspec: Vec<Option<Misspec>> = if self.scenario == 3 {
            self.misspec.clone().unwrap_or_else(|| Misspec::CELLS.to_vec()).into_iter().map(Some).collect()
        } else {
            vec![None]
        };
        grid.iter()
            .flat_map(|&n_ext| misspec.iter().map(move |&m| ScenarioCell { n_trial, n_ext, misspec: m }))
            .collect()
    }

    pub fn ppv_threshold(&self) -> f64 {
        self.ppv_threshold.unwrap_or(50.0)
    }

    /// Draws the data of replication `rep` for `cell`.
    pub fn generate(&self, cell: &ScenarioCell, rep: usize) -> Result<GeneratedData> {
        let seed = derive_seed(self.seed, rep as u64);
        let n = cell.n_trial + cell.n_ext;
        match self.scenario {
            1 => gen_scenario1(cell.n_trial, cell.n_ext, seed),
            2 => gen_scenario2(n, self.ppv_threshold(), seed),
            _ => gen_scenario3(n, cell.misspec.unwrap_or_default(), seed),
        }
    }
}

/// One method on one subgroup of one replication. Numeric fields are
/// `None` when the method failed.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub scenario: u8,
    pub method: String,
    pub subgroup: i64,
    pub replication: usize,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub p_value: Option<f64>,
    pub covered: Option<bool>,
    pub truth: f64,
    pub max_weight: Option<f64>,
    /// Realized trial units.
    pub n_trial: usize,
    /// Nominal external size of the cell.
    pub n_ext: usize,
    pub misspec: Option<Misspec>,
    /// Replication seed.
    pub seed: u64,
    pub error: Option<String>,
}

pub const RECORD_COLUMNS: [&str; 15] = [
    "scenario", "method", "subgroup", "replication", "estimate", "se", "ci_low", "ci_high", "p_value",
    "covered", "truth", "max_weight", "n_trial", "n_ext", "seed",
];

/// Records ordered by cell, replication, method and subgroup.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScenarioResult {
    pub records: Vec<ReplicationRecord>,
}

impl ScenarioResult {
    /// Writes `records` with the `RECORD_COLUMNS` header. Failed cells leave
    /// their numeric fields empty; floats use the shortest round-trip form.
    pub fn write_csv<W: Write>(records: &[ReplicationRecord], writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(RECORD_COLUMNS)?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in records {
            w.write_record([
                r.scenario.to_string(),
                r.method.clone(),
                r.subgroup.to_string(),
                r.replication.to_string(),
                opt(r.estimate),
                opt(r.se),
                opt(r.ci_low),
                opt(r.ci_high),
                opt(r.p_value),
                r.covered.map(|c| u8::from(c).to_string()).unwrap_or_default(),
                r.truth.to_string(),
                opt(r.max_weight),
                r.n_trial.to_string(),
                r.n_ext.to_string(),
                r.seed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Generates one replication of `cell` and runs every method on both
/// subgroups.
pub fn run_replication(
    cfg: &ScenarioConfig,
    cell: &ScenarioCell,
    rep: usize,
    methods: &[String],
    settings: &MethodSettings,
) -> Result<Vec<ReplicationRecord>> {
    let data = cfg.generate(cell, rep)?;
    let seed = derive_seed(cfg.seed, rep as u64);
    let n_trial = data.dataset.n_trial();
    let outcomes = estimate_methods(&data.dataset, &data.views, methods, &SUBGROUPS, settings, seed);
    Ok(outcomes
        .into_iter()
        .map(|o| {
            let truth = data.truth[&o.subgroup];
            let base = ReplicationRecord {
                scenario: cfg.scenario,
                method: o.method,
                subgroup: o.subgroup,
                replication: rep,
                estimate: None,
                se: None,
                ci_low: None,
                ci_high: None,
                p_value: None,
                covered: None,
                truth,
                max_weight: None,
                n_trial,
                n_ext: cell.n_ext,
                misspec: cell.misspec,
                seed,
                error: None,
            };
            match o.result {
                Ok(rep) => ReplicationRecord {
                    estimate: Some(rep.estimate),
                    se: Some(rep.se),
                    ci_low: Some(rep.ci_low),
                    ci_high: Some(rep.ci_high),
                    p_value: Some(rep.p_value),
                    covered: Some(covers(rep.estimate, rep.se, truth)),
                    max_weight: rep.max_weight,
                    ..base
                },
                Err(e) => ReplicationRecord { error: Some(e), ..base },
            }
        })
        .collect())
}

/// Runs every cell and replication of `cfg`. Replications run on the
/// current rayon pool; results are assembled by index, so the output does
/// not depend on scheduling. A generation failure aborts the run; a method
/// failure only marks its record.
pub fn run_replications(
    cfg: &ScenarioConfig,
    methods: &[String],
    settings: &MethodSettings,
) -> Result<ScenarioResult> {
    cfg.validate()?;
    let jobs: Vec<(ScenarioCell, usize)> =
        cfg.cells().into_iter().flat_map(|c| (0..cfg.reps).map(move |r| (c, r))).collect();
    let chunks: Vec<Result<Vec<ReplicationRecord>>> =
        jobs.par_iter().map(|(cell, r)| run_replication(cfg, cell, *r, methods, settings)).collect();
    let mut records = Vec::new();
    for chunk in chunks {
        records.extend(chunk?);
    }
    Ok(ScenarioResult { records })
}
