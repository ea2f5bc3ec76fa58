//! Documents under docs/schemas must describe what the binary reads and
//! writes.

use std::path::{Path, PathBuf};

use satett_cli::{analyze_dataset, run_study, schema_violations, AnalysisRow, AnalyzeConfig, SimulateConfig};
use satett_core::estimators::{MethodSettings, NuisanceSpec};
use satett_core::simulation::{gen_scenario1, Misspec, ScenarioConfig};
use serde_json::Value;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn load(name: &str) -> Value {
    let text = std::fs::read_to_string(root().join("docs/schemas").join(name)).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn violations(schema_file: &str, doc: &Value) -> Vec<String> {
    schema_violations(&serde_json::to_string(&load(schema_file)).unwrap(), doc)
}

fn assert_conforms(schema_file: &str, doc: &Value) {
    let errs = violations(schema_file, doc);
    assert!(errs.is_empty(), "{schema_file}: {errs:#?}\n{doc:#}");
}

fn full_settings() -> MethodSettings {
    let mut s = MethodSettings::default();
    s.glm = NuisanceSpec::forest();
    s.ranger = NuisanceSpec::glm();
    s
}

#[test]
fn serialized_configs_conform() {
    let mut study = ScenarioConfig::new(3, 4, 1);
    study.n_trial = Some(10);
    study.n_ext = Some(vec![20]);
    study.misspec = Some(Misspec::CELLS.to_vec());
    let cfg = SimulateConfig {
        study,
        methods: vec!["naive".into(), "cdml".into()],
        settings: full_settings(),
        out_dir: Some("out".into()),
    };
    assert_conforms("simulate-config.schema.json", &serde_json::to_value(&cfg).unwrap());

    let mut bare = cfg.clone();
    bare.study = ScenarioConfig::new(2, 1, 0);
    bare.study.ppv_threshold = Some(20.0);
    bare.out_dir = None;
    assert_conforms("simulate-config.schema.json", &serde_json::to_value(&bare).unwrap());

    let analyze = AnalyzeConfig {
        data: "d.csv".into(),
        schema: "s.json".into(),
        methods: vec!["riesz".into()],
        subgroups: Some(vec![0, 1]),
        settings: full_settings(),
        seed: 3,
        out: None,
    };
    assert_conforms("analyze-config.schema.json", &serde_json::to_value(&analyze).unwrap());
}

#[test]
fn shipped_configs_conform_and_load() {
    for entry in std::fs::read_dir(root().join("configs")).unwrap() {
        let path = entry.unwrap().path();
        let doc: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let schema = if doc.get("study").is_some() { "simulate-config.schema.json" } else { "analyze-config.schema.json" };
        assert_conforms(schema, &doc);
        if schema.starts_with("simulate") {
            SimulateConfig::load(&path).unwrap();
        } else {
            AnalyzeConfig::load(&path).unwrap();
        }
    }
}

#[test]
fn schema_and_loader_both_reject_typos() {
    let doc: Value = serde_json::json!({"study": {"scenario": 1, "rep": 3}, "methods": ["naive"]});
    assert!(!violations("simulate-config.schema.json", &doc).is_empty());
    assert!(serde_json::from_value::<SimulateConfig>(doc).is_err());
    let doc: Value = serde_json::json!({"study": {"scenario": 1}, "methods": ["naive"], "settings": {"riesz": {"basis": "cubic"}}});
    assert!(!violations("simulate-config.schema.json", &doc).is_empty());
    assert!(serde_json::from_value::<SimulateConfig>(doc).is_err());
}

#[test]
fn outputs_conform() {
    let mut study = ScenarioConfig::new(3, 2, 5);
    study.misspec = Some(vec![Misspec { data_treatment: true, outcome: false }]);
    let cfg = SimulateConfig { study, methods: vec!["naive".into(), "dr-glm".into()], settings: MethodSettings::default(), out_dir: None };
    let out = run_study(&cfg).unwrap();
    assert_conforms("metrics.schema.json", &serde_json::to_value(&out.metrics).unwrap());

    let g = gen_scenario1(60, 120, 2).unwrap();
    let analyze = AnalyzeConfig {
        data: "unused.csv".into(),
        schema: "unused.json".into(),
        methods: vec!["naive".into(), "dr-glm".into(), "riesz".into()],
        subgroups: Some(vec![1, 0]),
        settings: MethodSettings::default(),
        seed: 0,
        out: None,
    };
    let mut report = analyze_dataset(&g.dataset, &analyze).unwrap();
    report.rows.push(AnalysisRow {
        method: "covbal".into(),
        subgroup: 1,
        label: "1".into(),
        report: None,
        se_ratio: None,
        error: Some("balancing QP failed".into()),
    });
    assert_conforms("analysis-report.schema.json", &serde_json::to_value(&report).unwrap());

    let schema = satett_core::data::ColumnSchema {
        outcome: "y".into(),
        treatment: "a".into(),
        source: "s".into(),
        subgroup: "v".into(),
        covariates: Some(vec!["x".into()]),
    };
    assert_conforms("column-schema.schema.json", &serde_json::to_value(&schema).unwrap());
}
