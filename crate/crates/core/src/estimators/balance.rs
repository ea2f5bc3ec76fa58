//! Covariate-balancing weights from a nonnegative quadratic program.
//!
//! For subgroup `v` the weights minimize
//!
//! ```text
//! g' (I1v K1 I1v + I0v K0 I0v + S) g - 2 e' (K1 I1v + K0 I0v) g,   g >= 0,
//! ```
//!
//! the worst-case imbalance between the weighted arm and the trial subgroup
//! under each arm's kernel `K_a`, plus the penalty `S = lambda diag(sigma2_{A_i})`.
//! Only units with `V = v` carry weight; the two arms decouple.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{report_from_eif, weighted_dr, EstimateReport, FeatureViews};
use crate::data::{SubgroupTarget, TrialDataset};
use crate::error::{Error, Result};
use crate::learners::{gp_poly_fit, GpPolyModel, KernelConfig};

/// Symmetric positive semidefinite matrix over the active coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum QuadForm {
    Dense(DMatrix<f64>),
    /// `F F' + diag(d)`.
    LowRank { f: DMatrix<f64>, diag: DVector<f64> },
}

impl QuadForm {
    pub fn dim(&self) -> usize {
        match self {
            QuadForm::Dense(q) => q.nrows(),
            QuadForm::LowRank { f, .. } => f.nrows(),
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            QuadForm::Dense(q) => q * x,
            QuadForm::LowRank { f, diag } => f * (f.transpose() * x) + diag.component_mul(x),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            QuadForm::Dense(q) => q.clone(),
            QuadForm::LowRank { f, diag } => f * f.transpose() + DMatrix::from_diagonal(diag),
        }
    }

    fn principal(&self, idx: &[usize]) -> DMatrix<f64> {
        match self {
            QuadForm::Dense(q) => q.select_rows(idx).select_columns(idx),
            QuadForm::LowRank { f, diag } => {
                let fp = f.select_rows(idx);
                let mut m = &fp * fp.transpose();
                for (k, &i) in idx.iter().enumerate() {
                    m[(k, k)] += diag[i];
                }
                m
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceProblem {
    /// Number of units; weights are reported at this length.
    pub n: usize,
    /// Unit index of each QP coordinate (`V = v`, either arm), ascending.
    pub active: Vec<usize>,
    /// Arm of each QP coordinate.
    pub arm: Vec<u8>,
    /// Quadratic term over the active coordinates, penalty included.
    pub q: QuadForm,
    /// Linear term `(K1 I1v + K0 I0v)' e` over the active coordinates.
    pub c: DVector<f64>,
    /// Diagonal of the penalty `S` over the active coordinates.
    pub penalty: DVector<f64>,
    pub lambda: f64,
    /// `e' K_a e` for `a = 0, 1`: the imbalance of arm `a` at zero weights.
    pub imbalance_at_zero: [f64; 2],
}

impl BalanceProblem {
    /// A bare QP `min g'Qg - 2c'g, g >= 0` with every coordinate active and
    /// no separate penalty bookkeeping.
    pub fn from_dense(q: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        let m = c.len();
        if q.nrows() != m || q.ncols() != m {
            return Err(Error::Shape(format!("Q is {}x{}, c has length {m}", q.nrows(), q.ncols())));
        }
        Ok(BalanceProblem {
            n: m,
            active: (0..m).collect(),
            arm: vec![1; m],
            q: QuadForm::Dense(q),
            c,
            penalty: DVector::zeros(m),
            lambda: 0.0,
            imbalance_at_zero: [0.0; 2],
        })
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        x.dot(&self.q.apply(x)) - 2.0 * self.c.dot(x)
    }

    /// Max violation of the optimality conditions of the nonnegative QP:
    /// `|grad_i|` where `x_i > 0`, `max(0, -grad_i)` where `x_i = 0`.
    pub fn kkt_residual(&self, x: &DVector<f64>) -> f64 {
        let g = (self.q.apply(x) - &self.c) * 2.0;
        kkt(x, &g)
    }

    /// Imbalance of each arm at the given active-coordinate weights.
    pub fn imbalance(&self, x: &DVector<f64>) -> [f64; 2] {
        let mut out = self.imbalance_at_zero;
        for a in 0..2u8 {
            let xa = DVector::from_fn(x.len(), |k, _| if self.arm[k] == a { x[k] } else { 0.0 });
            let quad = xa.dot(&self.q.apply(&xa)) - xa.dot(&self.penalty.component_mul(&xa));
            out[a as usize] += quad - 2.0 * self.c.dot(&xa);
        }
        out
    }
}

fn kkt(x: &DVector<f64>, g: &DVector<f64>) -> f64 {
    x.iter()
        .zip(g.iter())
        .map(|(&xi, &gi)| if xi > 0.0 { gi.abs() } else { (-gi).max(0.0) })
        .fold(0.0, f64::max)
}

/// Assembles the balancing QP for `target` from per-arm GP fits. The kernel
/// `K_a` is the noiseless part `C_a (z'z')^d` of arm `a`'s fitted kernel on
/// `features`; arm `a`'s noise variance enters only through the penalty.
pub fn build_balance_problem(
    data: &TrialDataset,
    target: &SubgroupTarget,
    features: &DMatrix<f64>,
    gp1: &GpPolyModel,
    gp0: &GpPolyModel,
    lambda: f64,
) -> Result<BalanceProblem> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be > 0, got {lambda}")));
    }
    let n = data.n();
    if features.nrows() != n {
        return Err(Error::Shape("balance features need one row per unit".into()));
    }
    let masks = data.masks_unchecked(target.v);
    let f1 = gp1.kernel_features(features);
    let f0 = gp0.kernel_features(features);
    let (r1, r0) = (f1.ncols(), f0.ncols());
    let sum_rows = |f: &DMatrix<f64>| {
        let mut s = DVector::zeros(f.ncols());
        for &j in &masks.trial {
            s += f.row(j).transpose();
        }
        s
    };
    let (s1, s0) = (sum_rows(&f1), sum_rows(&f0));

    let mut active: Vec<usize> = masks.treated.iter().chain(&masks.control).copied().collect();
    active.sort_unstable();
    let m = active.len();
    let arm: Vec<u8> = active.iter().map(|&i| data.a()[i]).collect();
    let sigma2 = [gp0.config.sigma2, gp1.config.sigma2];
    let mut f = DMatrix::zeros(m, r1 + r0);
    let mut c = DVector::zeros(m);
    let mut penalty = DVector::zeros(m);
    for (k, &i) in active.iter().enumerate() {
        if arm[k] == 1 {
            f.view_mut((k, 0), (1, r1)).copy_from(&f1.row(i));
            c[k] = f1.row(i).dot(&s1.transpose());
        } else {
            f.view_mut((k, r1), (1, r0)).copy_from(&f0.row(i));
            c[k] = f0.row(i).dot(&s0.transpose());
        }
        penalty[k] = lambda * sigma2[arm[k] as usize];
    }
    Ok(BalanceProblem {
        n,
        active,
        arm,
        q: QuadForm::LowRank { f, diag: penalty.clone() },
        c,
        penalty,
        lambda,
        imbalance_at_zero: [s0.dot(&s0), s1.dot(&s1)],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceWeights {
    /// One weight per unit; zero outside the active coordinates.
    pub gamma: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Total imbalance (both arms) at `gamma`.
    pub imbalance: f64,
    pub converged: bool,
}

// power iteration for the largest eigenvalue
fn lambda_max(q: &QuadForm) -> f64 {
    let m = q.dim();
    let mut x = DVector::from_element(m, 1.0 / (m as f64).sqrt());
    let mut est = 0.0;
    for _ in 0..30 {
        let y = q.apply(&x);
        let norm = y.norm();
        if norm == 0.0 {
            return 0.0;
        }
        est = x.dot(&y);
        x = y / norm;
    }
    est.max(q.apply(&x).dot(&x))
}

/// Primal active-set method on the support of `x0`: solve the equality QP on
/// the free set, step back to feasibility when a coordinate would go
/// negative, then free the most violating bound. Returns `None` if a free-set
/// system is singular.
fn active_set_polish(
    p: &BalanceProblem,
    x0: &DVector<f64>,
    tol: f64,
    max_outer: usize,
) -> Option<(DVector<f64>, usize)> {
    let m = p.c.len();
    let mut x = x0.map(|v| v.max(0.0));
    let mut free: Vec<usize> = (0..m).filter(|&i| x[i] > 0.0).collect();
    let mut steps = 0;
    for _ in 0..max_outer {
        loop {
            steps += 1;
            if free.is_empty() {
                x.fill(0.0);
                break;
            }
            let qf = p.q.principal(&free);
            let cf = DVector::from_iterator(free.len(), free.iter().map(|&i| p.c[i]));
            let chol = qf.clone().cholesky()?;
            let mut z = chol.solve(&cf);
            // one step of iterative refinement
            let r = &cf - &qf * &z;
            z += chol.solve(&r);
            if z.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (k, &i) in free.iter().enumerate() {
                    x[i] = z[k];
                }
                break;
            }
            let mut alpha = 1.0f64;
            for (k, &i) in free.iter().enumerate() {
                if z[k] <= 0.0 {
                    alpha = alpha.min(x[i] / (x[i] - z[k]));
                }
            }
            let mut keep = Vec::with_capacity(free.len());
            for (k, &i) in free.iter().enumerate() {
                let v = x[i] + alpha * (z[k] - x[i]);
                if z[k] <= 0.0 && x[i] / (x[i] - z[k]) <= alpha {
                    x[i] = 0.0;
                } else {
                    x[i] = v;
                    keep.push(i);
                }
            }
            free = keep;
        }
        let g = (p.q.apply(&x) - &p.c) * 2.0;
        let candidate =
            (0..m).filter(|&i| x[i] == 0.0).min_by(|&a, &b| g[a].total_cmp(&g[b]));
        match candidate {
            Some(j) if g[j] < -tol => {
                free.push(j);
                free.sort_unstable();
            }
            _ => return Some((x, steps)),
        }
    }
    Some((x, steps))
}

/// Solves the balancing QP to the KKT tolerance `tol`: accelerated projected
/// gradient with step `1/L` (`L` from 30 power iterations) and restarts on
/// objective increase, with an active-set polish attempted after 200, 400,
/// 800, ... iterations. Running out of iterations returns the best iterate
/// with `converged = false`.
pub fn solve_balance_weights(
    problem: &BalanceProblem,
    tol: f64,
    max_iter: usize,
) -> Result<BalanceWeights> {
    let m = problem.c.len();
    let finish = |x: DVector<f64>, iterations: usize| {
        let kkt_residual = problem.kkt_residual(&x);
        let mut gamma = vec![0.0; problem.n];
        for (k, &i) in problem.active.iter().enumerate() {
            gamma[i] = x[k];
        }
        let imb = problem.imbalance(&x);
        BalanceWeights {
            gamma,
            objective: problem.objective(&x),
            kkt_residual,
            iterations,
            imbalance: imb[0] + imb[1],
            converged: kkt_residual <= tol,
        }
    };
    let mut x = DVector::zeros(m);
    if m == 0 || problem.kkt_residual(&x) <= tol {
        return Ok(finish(x, 0));
    }
    let lmax = lambda_max(&problem.q);
    if !(lmax > 0.0) || !lmax.is_finite() {
        return Err(Error::Conditioning { jitter: 0.0 });
    }
    // gradient of g'Qg is 2Qg; small margin over the power-iteration estimate
    let mut step = 1.0 / (2.0 * lmax * 1.01);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut fx = problem.objective(&x);
    let mut next_polish = 200;
    let mut best = (fx, x.clone());
    for it in 1..=max_iter {
        let g = (problem.q.apply(&y) - &problem.c) * 2.0;
        let x_new = (&y - g * step).map(|v| v.max(0.0));
        let f_new = problem.objective(&x_new);
        if f_new > fx {
            if t == 1.0 {
                // a plain gradient step failed: the Lipschitz estimate was low
                step *= 0.5;
            }
            // restart momentum from the current iterate
            y = x.clone();
            t = 1.0;
            continue;
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &x_new + (&x_new - &x) * ((t - 1.0) / t_new);
        x = x_new;
        fx = f_new;
        t = t_new;
        if fx < best.0 {
            best = (fx, x.clone());
        }
        if it % 10 == 0 && problem.kkt_residual(&x) <= tol {
            return Ok(finish(x, it));
        }
        if it == next_polish || it == max_iter {
            next_polish *= 2;
            if let Some((xp, _)) = active_set_polish(problem, &x, tol, 4 * m + 10) {
                if problem.kkt_residual(&xp) <= tol {
                    return Ok(finish(xp, it));
                }
                let fp = problem.objective(&xp);
                if fp < fx {
                    x = xp;
                    fx = fp;
                    y = x.clone();
                    t = 1.0;
                    if fx < best.0 {
                        best = (fx, x.clone());
                    }
                }
            }
        }
    }
    Ok(finish(best.1, max_iter))
}

/// Weighted estimate with the balancing weights in both weight slots and
/// the given outcome models.
pub fn estimate_covbal(
    data: &TrialDataset,
    target: &SubgroupTarget,
    weights: &BalanceWeights,
    m1: &[f64],
    m0: &[f64],
) -> Result<EstimateReport> {
    let masks = data.subgroup_masks(target)?;
    let dr = weighted_dr(data, &masks, &weights.gamma, &weights.gamma, m1, m0)?;
    let mut report = report_from_eif("covbal", target, &dr)?;
    if !weights.converged {
        report.warnings.push(format!(
            "balancing QP stopped at KKT residual {:.3e} after {} iterations",
            weights.kkt_residual, weights.iterations
        ));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovbalConfig {
    pub lambda: f64,
    /// Supplies the degree and jitter; `C` and `sigma2` are fitted.
    pub kernel: KernelConfig,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CovbalConfig {
    fn default() -> Self {
        CovbalConfig { lambda: 0.01, kernel: KernelConfig::default(), tol: 1e-8, max_iter: 50_000 }
    }
}

#[derive(Debug, Clone)]
pub struct CovbalFit {
    pub report: EstimateReport,
    pub weights: BalanceWeights,
    pub gp1: GpPolyModel,
    pub gp0: GpPolyModel,
}

/// GP outcome models per arm, each fitted on all units of that arm.
pub fn fit_covbal_gps(
    data: &TrialDataset,
    views: &FeatureViews,
    kernel: &KernelConfig,
) -> Result<(GpPolyModel, GpPolyModel)> {
    let x = &views.outcome;
    let fit_arm = |a: u8| -> Result<GpPolyModel> {
        let idx: Vec<usize> = (0..data.n()).filter(|&i| data.a()[i] == a).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| data.y()[i]).collect();
        gp_poly_fit(&x.select_rows(&idx), &ys, kernel)
    };
    Ok((fit_arm(1)?, fit_arm(0)?))
}

/// Builds and solves the balancing QP for one subgroup and evaluates the
/// weighted estimate with the GP posterior means as outcome models.
pub fn covbal_with_gps(
    data: &TrialDataset,
    target: &SubgroupTarget,
    views: &FeatureViews,
    gp1: GpPolyModel,
    gp0: GpPolyModel,
    cfg: &CovbalConfig,
) -> Result<CovbalFit> {
    let x = &views.outcome;
    let problem = build_balance_problem(data, target, x, &gp1, &gp0, cfg.lambda)?;
    let weights = solve_balance_weights(&problem, cfg.tol, cfg.max_iter)?;
    let report = estimate_covbal(data, target, &weights, &gp1.predict(x), &gp0.predict(x))?;
    Ok(CovbalFit { report, weights, gp1, gp0 })
}

/// `fit_covbal_gps` followed by `covbal_with_gps`.
pub fn run_covbal(
    data: &TrialDataset,
    target: &SubgroupTarget,
    views: &FeatureViews,
    cfg: &CovbalConfig,
) -> Result<CovbalFit> {
    data.subgroup_masks(target)?;
    let (gp1, gp0) = fit_covbal_gps(data, views, &cfg.kernel)?;
    covbal_with_gps(data, target, views, gp1, gp0, cfg)
}
