use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use satett_core::data::{SubgroupTarget, TrialDataset};
use satett_core::estimators::{
    estimate_cov_adj, estimate_covbal, estimate_dr, estimate_naive, fit_nuisances, weighted_dr,
    BalanceWeights, FeatureViews, NuisanceFits, NuisanceSpec,
};

fn trial_only(n: usize, seed: u64) -> TrialDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let v: Vec<i64> = (0..n).map(|i| (i % 2) as i64).collect();
    let a: Vec<u8> = (0..n).map(|i| u8::from((i / 2) % 3 != 0)).collect();
    let y: Vec<f64> = (0..n).map(|i| x[i] + f64::from(a[i]) * (v[i] as f64 - 0.5) + rng.random::<f64>()).collect();
    TrialDataset::new(y, a, vec![1; n], v, DMatrix::from_column_slice(n, 1, &x)).unwrap()
}

/// Constant arm means as outcome models and the within-subgroup treated
/// share as propensity.
fn trivial_fits(d: &TrialDataset, v: i64, pooled: bool) -> NuisanceFits {
    let idx = |arm: u8| -> Vec<usize> { (0..d.n()).filter(|&i| d.v()[i] == v && d.a()[i] == arm).collect() };
    let mean = |ix: &[usize]| ix.iter().map(|&i| d.y()[i]).sum::<f64>() / ix.len() as f64;
    let (i1, i0) = (idx(1), idx(0));
    let share = i1.len() as f64 / (i1.len() + i0.len()) as f64;
    NuisanceFits {
        m1: vec![mean(&i1); d.n()],
        m0: vec![mean(&i0); d.n()],
        pi: vec![share; d.n()],
        eta: vec![1.0; d.n()],
        learner_id: "trivial".into(),
        pooled,
    }
}

#[test]
fn naive_cov_adj_and_dr_coincide_under_trivial_nuisances() {
    let d = trial_only(90, 1);
    for v in [0, 1] {
        let t = SubgroupTarget::new(v);
        let naive = estimate_naive(&d, &t).unwrap();
        let cov = estimate_cov_adj(&d, &t, &trivial_fits(&d, v, false)).unwrap();
        let dr = estimate_dr(&d, &t, &trivial_fits(&d, v, true), "dr-glm").unwrap();
        assert!((naive.estimate - cov.estimate).abs() < 1e-10);
        assert!((cov.estimate - dr.estimate).abs() < 1e-10);
        assert!((cov.se - dr.se).abs() < 1e-12);
    }
}

#[test]
fn eif_and_two_sample_standard_errors_differ_by_degrees_of_freedom() {
    let d = trial_only(90, 2);
    let n = d.n() as f64;
    for v in [0, 1] {
        let t = SubgroupTarget::new(v);
        let naive = estimate_naive(&d, &t).unwrap();
        let cov = estimate_cov_adj(&d, &t, &trivial_fits(&d, v, false)).unwrap();
        let arm = |a: u8| -> Vec<f64> {
            (0..d.n()).filter(|&i| d.v()[i] == v && d.a()[i] == a).map(|i| d.y()[i]).collect()
        };
        let ss = |ys: &[f64]| {
            let m = ys.iter().sum::<f64>() / ys.len() as f64;
            ys.iter().map(|y| (y - m).powi(2)).sum::<f64>()
        };
        let (y1, y0) = (arm(1), arm(0));
        let (n1, n0) = (y1.len() as f64, y0.len() as f64);
        let eif_var = n / (n - 1.0) * (ss(&y1) / (n1 * n1) + ss(&y0) / (n0 * n0));
        let two_sample = ss(&y1) / (n1 * (n1 - 1.0)) + ss(&y0) / (n0 * (n0 - 1.0));
        assert!((cov.se.powi(2) - eif_var).abs() < 1e-12);
        assert!((naive.se.powi(2) - two_sample).abs() < 1e-12);
    }
}

#[test]
fn pooled_fit_on_trial_only_data_equals_cov_adj() {
    let d = trial_only(120, 3);
    let views = FeatureViews::from_data(&d);
    let spec = NuisanceSpec::glm();
    let pooled = fit_nuisances(&d, &views, &spec, true, 0).unwrap();
    let trial = fit_nuisances(&d, &views, &spec, false, 0).unwrap();
    assert!(pooled.eta.iter().all(|&e| e == 1.0));
    for v in [0, 1] {
        let t = SubgroupTarget::new(v);
        let dr = estimate_dr(&d, &t, &pooled, "dr-glm").unwrap();
        let cov = estimate_cov_adj(&d, &t, &trial).unwrap();
        assert!((dr.estimate - cov.estimate).abs() < 1e-10);
    }
}

/// Two-source data on a saturated covariate with known propensities.
fn discrete_two_source() -> (TrialDataset, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut y, mut a, mut s, mut v, mut x, mut pi, mut eta) = (vec![], vec![], vec![], vec![], vec![], vec![], vec![]);
    for i in 0..400 {
        let xi = (i % 3) as f64;
        let vi = ((i / 3) % 2) as i64;
        let e = 0.3 + 0.1 * xi;
        let p = 0.25 + 0.15 * xi + 0.1 * vi as f64;
        let si = u8::from(rng.random::<f64>() < e);
        let ai = u8::from(rng.random::<f64>() < p);
        y.push(xi + f64::from(ai) * (vi as f64 - 0.5) + rng.random::<f64>());
        a.push(ai);
        s.push(si);
        v.push(vi);
        x.push(xi);
        pi.push(p);
        eta.push(e);
    }
    let n = y.len();
    (TrialDataset::new(y, a, s, v, DMatrix::from_column_slice(n, 1, &x)).unwrap(), pi, eta)
}

#[test]
fn covbal_with_true_ratio_weights_equals_dr() {
    let (d, pi, eta) = discrete_two_source();
    let m1: Vec<f64> = (0..d.n()).map(|i| 0.1 * i as f64 % 1.7).collect();
    let m0: Vec<f64> = (0..d.n()).map(|i| 0.3 * i as f64 % 1.1).collect();
    let fits = NuisanceFits { m1: m1.clone(), m0: m0.clone(), pi: pi.clone(), eta: eta.clone(), learner_id: "truth".into(), pooled: true };
    let gamma: Vec<f64> = (0..d.n())
        .map(|i| if d.a()[i] == 1 { eta[i] / pi[i] } else { eta[i] / (1.0 - pi[i]) })
        .collect();
    let weights = BalanceWeights { gamma, objective: 0.0, kkt_residual: 0.0, iterations: 0, imbalance: 0.0, converged: true };
    for v in [0, 1] {
        let t = SubgroupTarget::new(v);
        let cb = estimate_covbal(&d, &t, &weights, &m1, &m0).unwrap();
        let dr = estimate_dr(&d, &t, &fits, "dr-glm").unwrap();
        assert!((cb.estimate - dr.estimate).abs() < 1e-10);
        assert!((cb.se - dr.se).abs() < 1e-10);
    }
}

#[test]
fn influence_values_average_to_zero_and_scale_with_outcomes() {
    let (d, pi, eta) = discrete_two_source();
    let t = SubgroupTarget::new(1);
    let masks = d.subgroup_masks(&t).unwrap();
    let w1: Vec<f64> = eta.iter().zip(&pi).map(|(e, p)| e / p).collect();
    let w0: Vec<f64> = eta.iter().zip(&pi).map(|(e, p)| e / (1.0 - p)).collect();
    let m1 = vec![0.4; d.n()];
    let m0 = vec![-0.2; d.n()];
    let base = weighted_dr(&d, &masks, &w1, &w0, &m1, &m0).unwrap();
    assert!(base.eif.mean().abs() < 1e-12);

    let c = 3.5;
    let scaled = TrialDataset::new(
        d.y().iter().map(|y| c * y).collect(),
        d.a().to_vec(),
        d.s().to_vec(),
        d.v().to_vec(),
        d.xtilde().clone(),
    )
    .unwrap();
    let sm1: Vec<f64> = m1.iter().map(|m| c * m).collect();
    let sm0: Vec<f64> = m0.iter().map(|m| c * m).collect();
    let s = weighted_dr(&scaled, &masks, &w1, &w0, &sm1, &sm0).unwrap();
    assert!((s.estimate - c * base.estimate).abs() < 1e-12);
}
