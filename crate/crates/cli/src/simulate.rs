use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use satett_core::simulation::{run_replications, ReplicationRecord, ScenarioResult};

use crate::config::SimulateConfig;
use crate::metrics::{aggregate_metrics, MetricsTable};
use crate::{thread_pool, CliError};

/// Command-line values that replace the config file's.
#[derive(Debug, Clone, Default)]
pub struct SimulateOverrides {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub result: ScenarioResult,
    pub metrics: MetricsTable,
}

/// Runs the study on the `SATETT_THREADS` pool and aggregates it.
pub fn run_study(cfg: &SimulateConfig) -> Result<StudyOutput, CliError> {
    cfg.validate()?;
    let pool = thread_pool()?;
    let result = pool.install(|| run_replications(&cfg.study, &cfg.methods, &cfg.settings))?;
    let metrics = aggregate_metrics(&result.records);
    Ok(StudyOutput { result, metrics })
}

/// Replication files: `replications.csv`, or one
/// `replications-<cell>.csv` per misspecification cell.
fn replication_files(records: &[ReplicationRecord]) -> Vec<(String, Vec<ReplicationRecord>)> {
    let mut out: Vec<(String, Vec<ReplicationRecord>)> = Vec::new();
    for r in records {
        let name = match r.misspec {
            Some(m) => format!("replications-{}.csv", m.label()),
            None => "replications.csv".to_string(),
        };
        match out.iter_mut().find(|(n, _)| *n == name) {
            Some((_, v)) => v.push(r.clone()),
            None => out.push((name, vec![r.clone()])),
        }
    }
    out
}

/// Writes replication CSVs, `metrics.csv` and `metrics.json` into `dir`
/// and returns the paths written.
pub fn write_outputs(dir: &Path, out: &StudyOutput) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, records) in replication_files(&out.result.records) {
        let path = dir.join(name);
        ScenarioResult::write_csv(&records, BufWriter::new(File::create(&path)?))?;
        written.push(path);
    }
    let path = dir.join("metrics.csv");
    out.metrics
        .write_csv(BufWriter::new(File::create(&path)?))
        .map_err(|e| CliError::Other(e.to_string()))?;
    written.push(path);
    let path = dir.join("metrics.json");
    let mut json = serde_json::to_string_pretty(&out.metrics).map_err(|e| CliError::Other(e.to_string()))?;
    json.push('\n');
    std::fs::write(&path, json)?;
    written.push(path);
    Ok(written)
}

pub fn cmd_simulate(config: &Path, overrides: &SimulateOverrides) -> Result<Vec<PathBuf>, CliError> {
    let mut cfg = SimulateConfig::load(config)?;
    if let Some(seed) = overrides.seed {
        cfg.study.seed = seed;
    }
    if let Some(reps) = overrides.reps {
        cfg.study.reps = reps;
    }
    let dir = overrides.out_dir.clone().or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    let out = run_study(&cfg)?;
    write_outputs(&dir, &out)
}
