use std::collections::BTreeMap;

use nalgebra::DMatrix;
use satett_core::data::{SubgroupTarget, TrialDataset};
use satett_core::estimators::{estimate_autodml, fit_riesz, RieszBasis};
use satett_core::simulation::{discrete_identification_oracle, DiscreteCell, DiscreteDgp, PointMass};

struct Atom {
    x: i64,
    v: i64,
    s: usize,
    a: usize,
    y0: f64,
    y1: f64,
    p: f64,
}

/// Every `(x, v, s, a, y0, y1)` outcome with its probability, taking the
/// two potential outcomes independent given the rest.
fn enumerate(dgp: &DiscreteDgp) -> Vec<Atom> {
    let mut atoms = Vec::new();
    for c in &dgp.cells {
        for s in 0..2 {
            let ps = if s == 1 { c.p_trial } else { 1.0 - c.p_trial };
            for a in 0..2 {
                let pa = if a == 1 { c.p_treat[s] } else { 1.0 - c.p_treat[s] };
                let (d0, d1) = (&c.potential[s][a][0], &c.potential[s][a][1]);
                for (y0, q0) in d0.values.iter().zip(&d0.probs) {
                    for (y1, q1) in d1.values.iter().zip(&d1.probs) {
                        let p = c.prob * ps * pa * q0 * q1;
                        atoms.push(Atom { x: c.x, v: c.v, s, a, y0: *y0, y1: *y1, p });
                    }
                }
            }
        }
    }
    atoms
}

/// Counterfactual effect among trial units and the observed-data formula,
/// both from the atom list.
fn brute_force(atoms: &[Atom], v: i64) -> (f64, f64) {
    let trial: Vec<&Atom> = atoms.iter().filter(|t| t.v == v && t.s == 1).collect();
    let mass: f64 = trial.iter().map(|t| t.p).sum();
    let truth = trial.iter().map(|t| t.p * (t.y1 - t.y0)).sum::<f64>() / mass;

    let mut px: BTreeMap<i64, f64> = BTreeMap::new();
    for t in &trial {
        *px.entry(t.x).or_default() += t.p / mass;
    }
    let regression = |x: i64, a: usize| {
        let cell: Vec<&Atom> = atoms.iter().filter(|t| t.v == v && t.x == x && t.a == a).collect();
        let m: f64 = cell.iter().map(|t| t.p).sum();
        cell.iter().map(|t| t.p * if a == 1 { t.y1 } else { t.y0 }).sum::<f64>() / m
    };
    let identified = px.iter().map(|(&x, p)| p * (regression(x, 1) - regression(x, 0))).sum();
    (truth, identified)
}

fn two_point(lo: f64, hi: f64, p_hi: f64) -> PointMass {
    PointMass::new(vec![lo, hi], vec![1.0 - p_hi, p_hi]).unwrap()
}

fn binary_dgp() -> DiscreteDgp {
    DiscreteDgp::new(vec![
        DiscreteCell::exchangeable(0, 0, 0.2, 0.4, [0.3, 0.5], two_point(0.0, 1.0, 0.3), two_point(0.0, 1.0, 0.6)),
        DiscreteCell::exchangeable(1, 0, 0.3, 0.5, [0.6, 0.5], two_point(0.0, 1.0, 0.5), two_point(0.0, 1.0, 0.4)),
        DiscreteCell::exchangeable(0, 1, 0.25, 0.6, [0.2, 0.5], two_point(0.0, 1.0, 0.2), two_point(0.0, 1.0, 0.9)),
        DiscreteCell::exchangeable(1, 1, 0.25, 0.2, [0.7, 0.5], two_point(0.0, 1.0, 0.7), two_point(0.0, 1.0, 0.8)),
    ])
    .unwrap()
}

fn three_level_dgp() -> DiscreteDgp {
    let mut cells = Vec::new();
    let probs = [0.1, 0.15, 0.25, 0.2, 0.2, 0.1];
    for (k, &p) in probs.iter().enumerate() {
        let x = (k % 3) as i64;
        let v = (k / 3) as i64;
        let xf = x as f64;
        cells.push(DiscreteCell::exchangeable(
            x,
            v,
            p,
            0.2 + 0.25 * xf,
            [0.1 + 0.3 * xf, 0.5],
            PointMass::new(vec![-1.0, xf, 2.0 * xf + 1.0], vec![0.2, 0.5, 0.3]).unwrap(),
            PointMass::new(vec![xf - 0.5, 3.0], vec![0.6 + 0.1 * v as f64, 0.4 - 0.1 * v as f64]).unwrap(),
        ));
    }
    DiscreteDgp::new(cells).unwrap()
}

/// External-only cell and treatment that depends on the source.
fn unbalanced_dgp() -> DiscreteDgp {
    DiscreteDgp::new(vec![
        DiscreteCell::exchangeable(0, 1, 0.3, 0.9, [0.05, 0.5], PointMass::constant(1.0), two_point(1.0, 4.0, 0.5)),
        DiscreteCell::exchangeable(1, 1, 0.3, 0.1, [0.95, 0.5], two_point(-2.0, 0.0, 0.25), PointMass::constant(0.5)),
        DiscreteCell::exchangeable(2, 1, 0.1, 0.0, [0.5, 0.5], PointMass::constant(9.0), PointMass::constant(-9.0)),
        DiscreteCell::exchangeable(0, 0, 0.3, 0.5, [0.4, 0.5], two_point(0.0, 1.0, 0.5), two_point(0.0, 2.0, 0.5)),
    ])
    .unwrap()
}

#[test]
fn formula_equals_truth_on_exchangeable_dgps() {
    for dgp in [binary_dgp(), three_level_dgp(), unbalanced_dgp()] {
        let atoms = enumerate(&dgp);
        for (v, r) in discrete_identification_oracle(&dgp).unwrap() {
            let (truth, identified) = brute_force(&atoms, v);
            assert!((r.truth - truth).abs() < 1e-12);
            assert!((r.identified - identified).abs() < 1e-12);
            assert!((r.truth - r.identified).abs() < 1e-12, "v={v}: {r:?}");
        }
    }
}

#[test]
fn source_dependent_outcomes_open_a_gap() {
    // Y(1) is one unit higher in the external source at every x
    let mut cells = Vec::new();
    for (x, p_trial) in [(0, 0.4), (1, 0.8)] {
        let mut c = DiscreteCell::exchangeable(x, 1, 0.5, p_trial, [0.3, 0.5], PointMass::constant(0.0), PointMass::constant(1.0));
        for t in 0..2 {
            c.potential[0][t][1] = PointMass::constant(2.0);
        }
        cells.push(c);
    }
    let dgp = DiscreteDgp::new(cells).unwrap();
    let r = discrete_identification_oracle(&dgp).unwrap()[&1];
    // P(x|S=1) = (1/3, 2/3); external share of treated = 9/19 and 3/23
    let gap = 107.0 / 437.0;
    assert!((r.truth - 1.0).abs() < 1e-12);
    assert!((r.identified - r.truth - gap).abs() < 1e-12);
    let (truth, identified) = brute_force(&enumerate(&dgp), 1);
    assert!((identified - truth - gap).abs() < 1e-12);
}

/// A dataset whose empirical frequencies reproduce the DGP exactly, with
/// each unit's outcome set to its cell's conditional mean.
fn replicate(dgp: &DiscreteDgp, total: f64) -> TrialDataset {
    let (mut y, mut a, mut s, mut v, mut x) = (vec![], vec![], vec![], vec![], vec![]);
    for c in &dgp.cells {
        for si in 0..2 {
            for t in 0..2 {
                let count = total * c.prob * c.p_source(si) * c.p_arm(si, t);
                let k = count.round();
                assert!((count - k).abs() < 1e-6, "non-integer count {count}");
                for _ in 0..k as usize {
                    y.push(c.potential[si][t][t].mean());
                    a.push(t as u8);
                    s.push(si as u8);
                    v.push(c.v);
                    x.push(c.x as f64);
                }
            }
        }
    }
    let n = y.len();
    TrialDataset::new(y, a, s, v, DMatrix::from_column_slice(n, 1, &x)).unwrap()
}

#[test]
fn saturated_autodml_recovers_the_identified_value() {
    let dgp = binary_dgp();
    let data = replicate(&dgp, 100_000.0);
    let design = data.design();
    let oracle = discrete_identification_oracle(&dgp).unwrap();
    for v in [0, 1] {
        let t = SubgroupTarget::new(v);
        let fit = fit_riesz(&data, &t, &design, RieszBasis::Saturated, 0.0).unwrap();
        // exact regressions E(Y | A=a, x, v)
        let regression = |arm: u8, i: usize| {
            let same: Vec<usize> = (0..data.n())
                .filter(|&j| data.a()[j] == arm && data.v()[j] == data.v()[i] && design[(j, 0)] == design[(i, 0)])
                .collect();
            same.iter().map(|&j| data.y()[j]).sum::<f64>() / same.len() as f64
        };
        let mut cache = BTreeMap::new();
        let mut m = |arm: u8| -> Vec<f64> {
            (0..data.n())
                .map(|i| *cache.entry((arm, data.v()[i], design[(i, 0)].to_bits())).or_insert_with(|| regression(arm, i)))
                .collect()
        };
        let (m1, m0) = (m(1), m(0));
        let exact = estimate_autodml(&data, &t, &fit, &m1, &m0).unwrap();
        assert!((exact.estimate - oracle[&v].identified).abs() < 1e-8);
        let zeros = vec![0.0; data.n()];
        let blind = estimate_autodml(&data, &t, &fit, &zeros, &zeros).unwrap();
        assert!((blind.estimate - oracle[&v].identified).abs() < 1e-8);
    }
}
