//! JSON payloads of the `simulate` and `analyze` commands. Each file is
//! checked against its schema in docs/schemas before it is deserialized;
//! relative paths resolve against the config file's directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use satett_core::estimators::{check_method_id, MethodSettings};
use satett_core::simulation::ScenarioConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub study: ScenarioConfig,
    pub methods: Vec<String>,
    #[serde(default)]
    pub settings: MethodSettings,
    /// Defaults to the current directory.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    /// CSV file with one row per unit.
    pub data: PathBuf,
    /// Column mapping (JSON).
    pub schema: PathBuf,
    pub methods: Vec<String>,
    /// Subgroup codes to report; defaults to every code with trial units.
    #[serde(default)]
    pub subgroups: Option<Vec<i64>>,
    #[serde(default)]
    pub settings: MethodSettings,
    #[serde(default)]
    pub seed: u64,
    /// Report path; the report goes to stdout when absent.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

pub const SIMULATE_SCHEMA: &str = include_str!("../../../docs/schemas/simulate-config.schema.json");
pub const ANALYZE_SCHEMA: &str = include_str!("../../../docs/schemas/analyze-config.schema.json");
pub const COLUMN_SCHEMA: &str = include_str!("../../../docs/schemas/column-schema.schema.json");

/// Every violation of `schema` by `doc`, as `path: message` lines.
pub fn schema_violations(schema: &str, doc: &Value) -> Vec<String> {
    let schema: Value = serde_json::from_str(schema).expect("bundled schema is valid JSON");
    let validator = jsonschema::validator_for(&schema).expect("bundled schema compiles");
    validator
        .iter_errors(doc)
        .map(|e| {
            let at = e.instance_path.to_string();
            format!("{}: {e}", if at.is_empty() { "/" } else { &at })
        })
        .collect()
}

/// Reads `path`, checks it against `schema`, then deserializes it.
pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, schema: &str) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let errs = schema_violations(schema, &doc);
    if !errs.is_empty() {
        return Err(CliError::Config(format!("{} does not match its schema:\n  {}", path.display(), errs.join("\n  "))));
    }
    serde_json::from_value(doc).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Rejects empty or duplicated method lists and any id that is not a
/// supported method.
pub fn check_methods(methods: &[String]) -> Result<(), CliError> {
    if methods.is_empty() {
        return Err(CliError::Config("methods must list at least one method".into()));
    }
    let mut seen = BTreeSet::new();
    for m in methods {
        check_method_id(m).map_err(|e| CliError::Config(e.to_string()))?;
        if !seen.insert(m) {
            return Err(CliError::Config(format!("method `{m}` listed twice")));
        }
    }
    Ok(())
}

impl SimulateConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut cfg: SimulateConfig = read_json(path, SIMULATE_SCHEMA)?;
        cfg.out_dir = cfg.out_dir.map(|p| resolve(&config_dir(path), &p));
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.study.validate().map_err(|e| CliError::Config(e.to_string()))?;
        check_methods(&self.methods)
    }
}

impl AnalyzeConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut cfg: AnalyzeConfig = read_json(path, ANALYZE_SCHEMA)?;
        let base = config_dir(path);
        cfg.data = resolve(&base, &cfg.data);
        cfg.schema = resolve(&base, &cfg.schema);
        cfg.out = cfg.out.map(|p| resolve(&base, &p));
        check_methods(&cfg.methods)?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{"study": {"scenario": 1}, "methods": ["naive"], "outdir": "x"}"#;
        assert!(serde_json::from_str::<SimulateConfig>(text).is_err());
        let text = r#"{"study": {"scenario": 1, "reps": 3}, "methods": ["naive"]}"#;
        let cfg: SimulateConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.study.reps, 3);
        assert_eq!(cfg.settings, MethodSettings::default());
    }

    #[test]
    fn method_list_errors() {
        let err = check_methods(&["nope".into()]).unwrap_err().to_string();
        assert!(err.contains("valid methods are naive, cov-adj"), "{err}");
        let err = check_methods(&["dr-bayglm".into()]).unwrap_err().to_string();
        assert!(err.contains("out of scope"), "{err}");
        assert!(check_methods(&["naive".into(), "naive".into()]).is_err());
        assert!(check_methods(&[]).is_err());
    }

    #[test]
    fn schema_reports_every_violation() {
        let doc = serde_json::json!({"study": {"scenario": 4, "reps": 0}, "methods": []});
        let errs = schema_violations(SIMULATE_SCHEMA, &doc);
        assert_eq!(errs.len(), 3, "{errs:?}");
        assert!(errs.iter().any(|e| e.starts_with("/study/scenario")));
    }
}
