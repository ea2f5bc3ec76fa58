//! Gaussian-process regression with the polynomial kernel
//! `K(z, z') = C (z'z')^d + sigma2 [z = z']`.
//!
//! Inputs are standardized per column and an intercept feature 1 is appended,
//! so the degree-1 kernel spans affine functions. The kernel has the explicit
//! feature map `phi(z)` of weighted degree-`d` monomials, which keeps every
//! solve at the size of the feature space instead of `n`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coarse grid for `log10 C`.
pub const GP_C_GRID: [f64; 9] = [-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0];
/// Coarse grid for `log10 sigma2`.
pub const GP_SIGMA2_GRID: [f64; 9] = [-3.0, -2.5, -2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0];
/// Refinement spacing in decades (half the coarse spacing).
pub const GP_REFINE_STEP: f64 = 0.25;

const MAX_JITTER: f64 = 1e-4;
const MAX_CLIMB: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    #[serde(rename = "C")]
    pub c: f64,
    pub d1: u32,
    pub sigma2: f64,
    pub jitter: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig { c: 1.0, d1: 1, sigma2: 1.0, jitter: 1e-8 }
    }
}

impl KernelConfig {
    fn check(&self) -> Result<()> {
        if !(self.c > 0.0) || !(self.sigma2 > 0.0) || self.d1 == 0 || !(self.jitter >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "kernel needs C > 0, sigma2 > 0, d1 >= 1, jitter >= 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Per-column centering and scaling; constant columns are only centered.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Standardizer {
    means: Vec<f64>,
    sds: Vec<f64>,
}

impl Standardizer {
    pub(crate) fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut means = Vec::with_capacity(x.ncols());
        let mut sds = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            means.push(m);
            sds.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Standardizer { means, sds }
    }

    /// Standardized columns with a trailing intercept column.
    pub(crate) fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let p = self.means.len();
        DMatrix::from_fn(x.nrows(), p + 1, |i, j| {
            if j == p {
                1.0
            } else {
                (x[(i, j)] - self.means[j]) / self.sds[j]
            }
        })
    }
}

/// Exponent vectors of all degree-`d` monomials in `q` variables, with the
/// square root of the multinomial coefficient, so `phi(z)'phi(z') = (z'z')^d`.
fn monomials(q: usize, d: u32) -> Vec<(Vec<u32>, f64)> {
    fn rec(q: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == q - 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for k in (0..=left).rev() {
            cur.push(k);
            rec(q, left - k, cur, out);
            cur.pop();
        }
    }
    let mut exps = Vec::new();
    rec(q, d, &mut Vec::new(), &mut exps);
    let fact = |k: u32| (1..=k).map(f64::from).product::<f64>();
    exps.into_iter()
        .map(|e| {
            let coef = fact(d) / e.iter().map(|&k| fact(k)).product::<f64>();
            (e, coef.sqrt())
        })
        .collect()
}

fn feature_map(z: &DMatrix<f64>, d: u32) -> DMatrix<f64> {
    if d == 1 {
        return z.clone();
    }
    let mono = monomials(z.ncols(), d);
    DMatrix::from_fn(z.nrows(), mono.len(), |i, k| {
        let (e, c) = &mono[k];
        c * e.iter().enumerate().map(|(j, &p)| z[(i, j)].powi(p as i32)).product::<f64>()
    })
}

/// Sufficient statistics of the training data in feature space.
struct Gram {
    ftf: DMatrix<f64>,
    fty: DVector<f64>,
    yty: f64,
    n: usize,
}

struct Evaluation {
    lml: f64,
    weights: DVector<f64>,
    jitter: f64,
}

impl Gram {
    /// Log marginal likelihood and posterior-mean weights for
    /// `K = C Phi Phi' + (sigma2 + jitter) I`, via the Woodbury identity and
    /// the matrix determinant lemma. Jitter escalates tenfold up to 1e-4.
    fn evaluate(&self, c: f64, sigma2: f64, jitter0: f64) -> Result<Evaluation> {
        let r = self.ftf.nrows();
        let mut jitter = jitter0;
        loop {
            let s = sigma2 + jitter;
            let mut m = self.ftf.clone();
            for k in 0..r {
                m[(k, k)] += s / c;
            }
            if let Some(chol) = m.cholesky() {
                let w = chol.solve(&self.fty);
                let quad = (self.yty - self.fty.dot(&w)) / s;
                let logdet_m: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                let logdet_k = self.n as f64 * s.ln() + logdet_m + r as f64 * (c / s).ln();
                let lml = -0.5 * quad
                    - 0.5 * logdet_k
                    - 0.5 * self.n as f64 * (2.0 * std::f64::consts::PI).ln();
                if lml.is_finite() {
                    return Ok(Evaluation { lml, weights: w, jitter });
                }
            }
            if jitter >= MAX_JITTER {
                return Err(Error::Conditioning { jitter });
            }
            jitter = if jitter == 0.0 { 1e-8 } else { (jitter * 10.0).min(MAX_JITTER) };
        }
    }
}

/// Fitted GP: posterior mean plus the hyperparameters it was fitted with.
#[derive(Debug, Clone, PartialEq)]
pub struct GpPolyModel {
    standardizer: Standardizer,
    pub config: KernelConfig,
    /// Posterior mean in feature space; `f(z) = phi(z)' weights`.
    weights: DVector<f64>,
    pub log_marginal_likelihood: f64,
    /// Diagonal jitter actually used.
    pub jitter_used: f64,
}

impl GpPolyModel {
    /// Fit at fixed hyperparameters.
    pub fn fit_fixed(features: &DMatrix<f64>, targets: &[f64], config: &KernelConfig) -> Result<Self> {
        config.check()?;
        let (standardizer, gram) = prepare(features, targets, config.d1)?;
        let ev = gram.evaluate(config.c, config.sigma2, config.jitter)?;
        Ok(GpPolyModel {
            standardizer,
            config: config.clone(),
            weights: ev.weights,
            log_marginal_likelihood: ev.lml,
            jitter_used: ev.jitter,
        })
    }

    /// `phi(z)` for new raw feature rows (standardized with training moments).
    pub fn feature_map(&self, features: &DMatrix<f64>) -> DMatrix<f64> {
        feature_map(&self.standardizer.apply(features), self.config.d1)
    }

    /// `F` with `F F' = C (z'z')^d`, the noiseless kernel block.
    pub fn kernel_features(&self, features: &DMatrix<f64>) -> DMatrix<f64> {
        self.feature_map(features) * self.config.c.sqrt()
    }

    pub fn predict(&self, features: &DMatrix<f64>) -> Vec<f64> {
        (self.feature_map(features) * &self.weights).iter().copied().collect()
    }
}

fn prepare(features: &DMatrix<f64>, targets: &[f64], d1: u32) -> Result<(Standardizer, Gram)> {
    let n = targets.len();
    if features.nrows() != n {
        return Err(Error::Shape(format!("features have {} rows, targets {n}", features.nrows())));
    }
    if n < 2 {
        return Err(Error::InsufficientData(format!("GP fit needs n >= 2, got {n}")));
    }
    let standardizer = Standardizer::fit(features);
    let phi = feature_map(&standardizer.apply(features), d1);
    let y = DVector::from_column_slice(targets);
    let gram = Gram { ftf: phi.transpose() * &phi, fty: phi.transpose() * &y, yty: y.dot(&y), n };
    Ok((standardizer, gram))
}

/// Maximizes the log marginal likelihood over `(C, sigma2)`: the best point of
/// the 9x9 coarse grid, then hill-climbing on the half-spacing lattice inside
/// the grid's bounds until no neighbor improves. `init` supplies `d1` and the
/// jitter; its `C` and `sigma2` are ignored.
pub fn gp_poly_fit(
    features: &DMatrix<f64>,
    targets: &[f64],
    init: &KernelConfig,
) -> Result<GpPolyModel> {
    init.check()?;
    let (standardizer, gram) = prepare(features, targets, init.d1)?;

    // lattice index -> log10 value; coarse points sit at even indices
    let steps = ((GP_C_GRID[8] - GP_C_GRID[0]) / GP_REFINE_STEP).round() as i32;
    let c_at = |i: i32| 10f64.powf(GP_C_GRID[0] + GP_REFINE_STEP * i as f64);
    let s_at = |j: i32| 10f64.powf(GP_SIGMA2_GRID[0] + GP_REFINE_STEP * j as f64);
    let mut cache: HashMap<(i32, i32), Option<f64>> = HashMap::new();
    let mut lml_at = |i: i32, j: i32| -> f64 {
        *cache
            .entry((i, j))
            .or_insert_with(|| gram.evaluate(c_at(i), s_at(j), init.jitter).ok().map(|e| e.lml))
            .as_ref()
            .unwrap_or(&f64::NEG_INFINITY)
    };

    let mut best = (0, 0);
    let mut best_val = f64::NEG_INFINITY;
    for i in (0..=steps).step_by(2) {
        for j in (0..=steps).step_by(2) {
            let v = lml_at(i, j);
            if v > best_val {
                best_val = v;
                best = (i, j);
            }
        }
    }
    if !best_val.is_finite() {
        return Err(Error::Conditioning { jitter: MAX_JITTER });
    }
    for _ in 0..MAX_CLIMB {
        let mut next = best;
        let mut next_val = best_val;
        for di in -1..=1 {
            for dj in -1..=1 {
                let (i, j) = (best.0 + di, best.1 + dj);
                if (di, dj) == (0, 0) || i < 0 || j < 0 || i > steps || j > steps {
                    continue;
                }
                let v = lml_at(i, j);
                if v > next_val {
                    next_val = v;
                    next = (i, j);
                }
            }
        }
        if next == best {
            break;
        }
        best = next;
        best_val = next_val;
    }

    let config = KernelConfig { c: c_at(best.0), sigma2: s_at(best.1), ..init.clone() };
    let ev = gram.evaluate(config.c, config.sigma2, config.jitter)?;
    Ok(GpPolyModel {
        standardizer,
        config,
        weights: ev.weights,
        log_marginal_likelihood: ev.lml,
        jitter_used: ev.jitter,
    })
}

/// Log marginal likelihood computed from the dense `n x n` kernel matrix
/// built entry by entry, for checking the feature-space route.
pub fn log_marginal_likelihood_dense(
    features: &DMatrix<f64>,
    targets: &[f64],
    config: &KernelConfig,
) -> Result<f64> {
    config.check()?;
    let n = targets.len();
    let z = Standardizer::fit(features).apply(features);
    let k = DMatrix::from_fn(n, n, |i, j| {
        let dot = z.row(i).dot(&z.row(j));
        let mut v = config.c * dot.powi(config.d1 as i32);
        if i == j {
            v += config.sigma2 + config.jitter;
        }
        v
    });
    let chol = k.cholesky().ok_or(Error::Conditioning { jitter: config.jitter })?;
    let y = DVector::from_column_slice(targets);
    let alpha = chol.solve(&y);
    let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(-0.5 * y.dot(&alpha) - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln())
}
