use std::fs::File;
use std::path::Path;

use satett_core::data::{ColumnSchema, PositivityDiagnostics, SubgroupTarget, TrialDataset};
use satett_core::estimators::{
    estimate_methods, estimate_naive, fit_nuisances, EstimateReport, FeatureViews,
};
use serde::Serialize;

use crate::config::{read_json, AnalyzeConfig, COLUMN_SCHEMA};
use crate::CliError;

/// One method on one subgroup. `se_ratio` is the naive standard error
/// divided by this method's.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisRow {
    pub method: String,
    pub subgroup: i64,
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<EstimateReport>,
    pub se_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub n: usize,
    pub n_trial: usize,
    pub n_external: usize,
    /// From the pooled GLM treatment and source fits; `None` if they failed.
    pub diagnostics: Option<PositivityDiagnostics>,
    pub rows: Vec<AnalysisRow>,
}

fn load_schema(path: &Path) -> Result<ColumnSchema, CliError> {
    read_json(path, COLUMN_SCHEMA)
}

fn read_dataset(data: &Path, schema: &ColumnSchema) -> Result<TrialDataset, CliError> {
    let file = File::open(data).map_err(|e| CliError::Config(format!("cannot read {}: {e}", data.display())))?;
    Ok(TrialDataset::read_csv(file, schema)?)
}

/// Parses and validates a dataset; every violation is reported.
pub fn cmd_validate(data: &Path, schema: &Path) -> Result<TrialDataset, CliError> {
    let dataset = read_dataset(data, &load_schema(schema)?)?;
    let violations = dataset.validate();
    if violations.is_empty() {
        Ok(dataset)
    } else {
        Err(CliError::Validation(violations.iter().map(ToString::to_string).collect()))
    }
}

/// Estimates every configured method on every requested subgroup. Method
/// failures become rows with `error` set.
pub fn analyze_dataset(data: &TrialDataset, cfg: &AnalyzeConfig) -> Result<AnalysisReport, CliError> {
    let subgroups = cfg.subgroups.clone().unwrap_or_else(|| data.trial_subgroups());
    for &v in &subgroups {
        data.target(v)?;
    }
    let views = FeatureViews::from_data(data);
    let outcomes = estimate_methods(data, &views, &cfg.methods, &subgroups, &cfg.settings, cfg.seed);
    let naive_se: Vec<Option<f64>> = subgroups
        .iter()
        .map(|&v| estimate_naive(data, &SubgroupTarget::new(v)).ok().map(|r| r.se))
        .collect();
    let rows = outcomes
        .into_iter()
        .map(|o| {
            let k = subgroups.iter().position(|&v| v == o.subgroup).expect("outcome subgroup was requested");
            let label = data.target(o.subgroup).map(|t| t.label).unwrap_or_default();
            match o.result {
                Ok(report) => {
                    let se_ratio = if o.method == "naive" {
                        Some(1.0)
                    } else {
                        naive_se[k].map(|se_n| se_n / report.se)
                    };
                    AnalysisRow { method: o.method, subgroup: o.subgroup, label, report: Some(report), se_ratio, error: None }
                }
                Err(e) => AnalysisRow { method: o.method, subgroup: o.subgroup, label, report: None, se_ratio: None, error: Some(e) },
            }
        })
        .collect();
    let diagnostics = fit_nuisances(data, &views, &cfg.settings.glm, true, cfg.seed)
        .ok()
        .map(|f| PositivityDiagnostics::new(data, &f.pi, &f.eta));
    Ok(AnalysisReport { n: data.n(), n_trial: data.n_trial(), n_external: data.n_external(), diagnostics, rows })
}

/// Loads the config and dataset, runs the analysis and writes the JSON
/// report to `out` when configured. Returns the report.
pub fn cmd_analyze(config: &Path) -> Result<AnalysisReport, CliError> {
    let cfg = AnalyzeConfig::load(config)?;
    let data = cmd_validate(&cfg.data, &cfg.schema)?;
    let report = analyze_dataset(&data, &cfg)?;
    if let Some(out) = &cfg.out {
        if let Some(dir) = out.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(out, report_json(&report)?)?;
    }
    Ok(report)
}

pub fn report_json(report: &AnalysisReport) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(report).map_err(|e| CliError::Other(e.to_string()))?;
    s.push('\n');
    Ok(s)
}
