//! Front end for `satett-core`: Monte Carlo studies (`simulate`), dataset
//! checks (`validate`) and estimation on a user dataset (`analyze`).
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 configuration or
//! validation error, 3 data-generation error.

pub mod analyze;
pub mod config;
pub mod metrics;
pub mod simulate;

use std::fmt;

pub use analyze::{analyze_dataset, cmd_analyze, cmd_validate, report_json, AnalysisReport, AnalysisRow};
pub use config::{schema_violations, AnalyzeConfig, SimulateConfig, ANALYZE_SCHEMA, COLUMN_SCHEMA, SIMULATE_SCHEMA};
pub use metrics::{aggregate_metrics, MetricsRow, MetricsTable, METRICS_COLUMNS};
pub use simulate::{cmd_simulate, run_study, SimulateOverrides, StudyOutput};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "SATETT_THREADS";

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Validation(Vec<String>),
    Generation(String),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Validation(_) => 2,
            CliError::Generation(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Validation(v) => {
                write!(f, "validation failed with {} violation(s)", v.len())?;
                for line in v {
                    write!(f, "\n  - {line}")?;
                }
                Ok(())
            }
            CliError::Generation(m) => write!(f, "generation error: {m}"),
            CliError::Other(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<satett_core::Error> for CliError {
    fn from(e: satett_core::Error) -> Self {
        use satett_core::Error as E;
        match e {
            E::Generation(_) => CliError::Generation(e.to_string()),
            E::Validation(v) => CliError::Validation(v.iter().map(ToString::to_string).collect()),
            E::InvalidArgument(_) | E::UnknownMethod(_) | E::OutOfScope(_) | E::MissingColumn(_) => {
                CliError::Config(e.to_string())
            }
            E::NonBinary { .. } | E::Parse { .. } | E::EmptyInput(_) | E::Shape(_) => {
                CliError::Validation(vec![e.to_string()])
            }
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

/// Worker pool sized by `SATETT_THREADS` (all cores when unset).
pub fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        let n: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| CliError::Other(e.to_string()))
}
