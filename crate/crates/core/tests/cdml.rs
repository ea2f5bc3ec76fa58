use std::cell::Cell;

use satett_core::data::{SubgroupTarget, TrialDataset};
use satett_core::estimators::{
    cdml_from_raw, estimate_cdml, estimate_cdml_with, CdmlConfig, DefaultRawFitter, FeatureViews,
    RawFitter, RawPredictions,
};
use satett_core::learners::{calibrate_predictions, CalibrationKind};
use satett_core::simulation::gen_scenario1;
use satett_core::Result;

struct Counting<'a> {
    inner: DefaultRawFitter,
    calls: &'a Cell<usize>,
}

impl RawFitter for Counting<'_> {
    fn fit_raw(&self, data: &TrialDataset, views: &FeatureViews, seed: u64) -> Result<RawPredictions> {
        self.calls.set(self.calls.get() + 1);
        self.inner.fit_raw(data, views, seed)
    }
}

fn small_cfg() -> CdmlConfig {
    let mut cfg = CdmlConfig::default();
    cfg.forest.n_trees = 25;
    cfg.bootstrap.b = 40;
    cfg
}

#[test]
fn bootstrap_never_refits_raw_models() {
    let g = gen_scenario1(100, 200, 5).unwrap();
    let cfg = small_cfg();
    let calls = Cell::new(0);
    let fitter = Counting { inner: DefaultRawFitter { forest: cfg.forest.clone(), logistic_ridge: 0.0 }, calls: &calls };
    let r = estimate_cdml_with(&g.dataset, &SubgroupTarget::new(1), &g.views, &fitter, &cfg, 3).unwrap();
    assert_eq!(calls.get(), 1);
    assert!(r.se > 0.0);
}

#[test]
fn same_seed_same_report() {
    let g = gen_scenario1(100, 200, 6).unwrap();
    let cfg = small_cfg();
    let t = SubgroupTarget::new(0);
    let a = estimate_cdml(&g.dataset, &t, &g.views, &cfg, 11).unwrap();
    let b = estimate_cdml(&g.dataset, &t, &g.views, &cfg, 11).unwrap();
    assert_eq!(a, b);
    let c = estimate_cdml(&g.dataset, &t, &g.views, &cfg, 12).unwrap();
    assert_ne!(a.se, c.se);
}

#[test]
fn calibrated_inputs_are_a_fixed_point() {
    let g = gen_scenario1(100, 300, 7).unwrap();
    let d = &g.dataset;
    let a: Vec<f64> = d.a().iter().map(|&x| f64::from(x)).collect();
    let raw = DefaultRawFitter { forest: small_cfg().forest, logistic_ridge: 0.0 }.fit_raw(d, &g.views, 1).unwrap();
    let once = calibrate_predictions(&raw.pi, &a, CalibrationKind::Probability).unwrap();
    let twice = calibrate_predictions(&once, &a, CalibrationKind::Probability).unwrap();
    for (x, y) in once.iter().zip(&twice) {
        assert!((x - y).abs() < 1e-12);
    }
    let t = SubgroupTarget::new(1);
    let est = cdml_from_raw(d, &t, &raw).unwrap();
    assert!(est.estimate.is_finite());
}
