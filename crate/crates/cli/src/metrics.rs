//! Per-cell Monte Carlo summaries of replication records.

use std::io::Write;

use satett_core::simulation::ReplicationRecord;
use serde::Serialize;

/// Summary of one `(scenario, design cell, method, subgroup)` group.
/// Moments use only replications whose method succeeded; they are `None`
/// when none did (and `variance`, `mse` also when only one did).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub scenario: u8,
    pub n_ext: usize,
    /// Misspecification label, empty outside Scenario 3.
    pub cell: String,
    pub method: String,
    pub subgroup: i64,
    pub truth: f64,
    /// Fraction of replications with `p < 0.05`.
    pub power: Option<f64>,
    pub mean_bias: Option<f64>,
    pub mean_abs_bias: Option<f64>,
    /// Sample variance of the estimates (divisor `reps_used - 1`).
    pub variance: Option<f64>,
    /// `variance + mean_bias^2`.
    pub mse: Option<f64>,
    pub coverage: Option<f64>,
    pub mean_se: Option<f64>,
    pub reps_used: usize,
    pub failures: usize,
}

impl MetricsRow {
    /// Monte Carlo standard error of the mean estimate.
    pub fn mc_se(&self) -> Option<f64> {
        self.variance.map(|v| (v / self.reps_used as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

pub const METRICS_COLUMNS: [&str; 15] = [
    "scenario", "n_ext", "cell", "method", "subgroup", "truth", "power", "mean_bias", "mean_abs_bias",
    "variance", "mse", "coverage", "mean_se", "reps_used", "failures",
];

impl MetricsTable {
    pub fn find(&self, method: &str, subgroup: i64, n_ext: usize, cell: &str) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.subgroup == subgroup && r.n_ext == n_ext && r.cell == cell)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(METRICS_COLUMNS)?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.scenario.to_string(),
                r.n_ext.to_string(),
                r.cell.clone(),
                r.method.clone(),
                r.subgroup.to_string(),
                r.truth.to_string(),
                opt(r.power),
                opt(r.mean_bias),
                opt(r.mean_abs_bias),
                opt(r.variance),
                opt(r.mse),
                opt(r.coverage),
                opt(r.mean_se),
                r.reps_used.to_string(),
                r.failures.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn cell_label(r: &ReplicationRecord) -> String {
    r.misspec.map(|m| m.label().to_string()).unwrap_or_default()
}

/// Groups records by design cell, method and subgroup, keeping the order in
/// which each group first appears, and summarizes each group.
pub fn aggregate_metrics(records: &[ReplicationRecord]) -> MetricsTable {
    type Key = (u8, usize, String, String, i64);
    let mut keys: Vec<Key> = Vec::new();
    let mut groups: Vec<Vec<&ReplicationRecord>> = Vec::new();
    for r in records {
        let key = (r.scenario, r.n_ext, cell_label(r), r.method.clone(), r.subgroup);
        match keys.iter().position(|k| *k == key) {
            Some(i) => groups[i].push(r),
            None => {
                keys.push(key);
                groups.push(vec![r]);
            }
        }
    }
    let rows = keys
        .into_iter()
        .zip(groups)
        .map(|((scenario, n_ext, cell, method, subgroup), group)| {
            summarize(scenario, n_ext, cell, method, subgroup, &group)
        })
        .collect();
    MetricsTable { rows }
}

fn summarize(
    scenario: u8,
    n_ext: usize,
    cell: String,
    method: String,
    subgroup: i64,
    group: &[&ReplicationRecord],
) -> MetricsRow {
    let truth = group[0].truth;
    let used: Vec<&ReplicationRecord> = group.iter().copied().filter(|r| r.estimate.is_some()).collect();
    let k = used.len();
    let mut row = MetricsRow {
        scenario,
        n_ext,
        cell,
        method,
        subgroup,
        truth,
        power: None,
        mean_bias: None,
        mean_abs_bias: None,
        variance: None,
        mse: None,
        coverage: None,
        mean_se: None,
        reps_used: k,
        failures: group.len() - k,
    };
    if k == 0 {
        return row;
    }
    let kf = k as f64;
    let est: Vec<f64> = used.iter().map(|r| r.estimate.unwrap()).collect();
    let mean = est.iter().sum::<f64>() / kf;
    let frac = |f: &dyn Fn(&ReplicationRecord) -> bool| used.iter().filter(|r| f(r)).count() as f64 / kf;
    row.power = Some(frac(&|r| r.p_value.is_some_and(|p| p < 0.05)));
    row.coverage = Some(frac(&|r| r.covered == Some(true)));
    row.mean_bias = Some(mean - truth);
    row.mean_abs_bias = Some(est.iter().map(|e| (e - truth).abs()).sum::<f64>() / kf);
    row.mean_se = Some(used.iter().map(|r| r.se.unwrap()).sum::<f64>() / kf);
    if k > 1 {
        let var = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (kf - 1.0);
        row.variance = Some(var);
        row.mse = Some(var + (mean - truth).powi(2));
    }
    row
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(method: &str, estimate: Option<f64>, se: f64, truth: f64) -> ReplicationRecord {
        let ci = estimate.map(|e| (e - 1.96 * se, e + 1.96 * se));
        ReplicationRecord {
            scenario: 1,
            method: method.into(),
            subgroup: 1,
            replication: 0,
            estimate,
            se: estimate.map(|_| se),
            ci_low: ci.map(|c| c.0),
            ci_high: ci.map(|c| c.1),
            p_value: estimate.map(|_| 0.5),
            covered: ci.map(|(lo, hi)| lo <= truth && truth <= hi),
            truth,
            max_weight: None,
            n_trial: 100,
            n_ext: 100,
            misspec: None,
            seed: 0,
            error: None,
        }
    }

    #[test]
    fn exact_estimates() {
        let rows: Vec<_> = (0..4).map(|_| record("naive", Some(0.5), 0.1, 0.5)).collect();
        let t = aggregate_metrics(&rows);
        let r = &t.rows[0];
        assert_eq!(r.mean_abs_bias, Some(0.0));
        assert_eq!(r.variance, Some(0.0));
        assert_eq!(r.coverage, Some(1.0));
    }

    #[test]
    fn two_point_hand_arithmetic() {
        let rows = vec![record("naive", Some(0.0), 10.0, 0.5), record("naive", Some(1.0), 10.0, 0.5)];
        let r = &aggregate_metrics(&rows).rows[0];
        assert_eq!(r.variance, Some(0.5));
        assert_eq!(r.mean_abs_bias, Some(0.5));
        assert_eq!(r.coverage, Some(1.0));
        assert_eq!(r.mse, Some(0.5));
    }

    #[test]
    fn all_failed_cell_has_null_metrics() {
        let rows = vec![record("cdml", None, 0.0, 0.5), record("cdml", None, 0.0, 0.5)];
        let r = &aggregate_metrics(&rows).rows[0];
        assert_eq!(r.reps_used, 0);
        assert_eq!(r.failures, 2);
        assert!(r.power.is_none() && r.variance.is_none() && r.mean_abs_bias.is_none());
    }

    #[test]
    fn groups_keep_first_appearance_order() {
        let rows = vec![
            record("dr-glm", Some(0.1), 1.0, 0.5),
            record("naive", Some(0.1), 1.0, 0.5),
            record("dr-glm", Some(0.2), 1.0, 0.5),
        ];
        let t = aggregate_metrics(&rows);
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0].method, "dr-glm");
        assert_eq!(t.rows[0].reps_used, 2);
    }
}
