//! Random forest of CART trees with variance-reduction splits.
//!
//! Bootstrap draws pick row positions, so the fit depends on row order for a
//! fixed seed: permuting the rows permutes which rows each tree sees.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::clip_probability;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForestMode {
    Regression,
    /// Targets must be 0/1; predictions are clipped probabilities.
    Probability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `ceil(sqrt(p))`.
    pub mtry: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { n_trees: 200, max_depth: 6, min_leaf: 5, mtry: None, bootstrap: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf { value: f64, count: usize },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
    /// Rows never drawn for this tree.
    pub oob: Vec<usize>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf { value, .. } => return value,
                Node::Split { feature, threshold, left, right } => {
                    k = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    /// Training-row counts of every leaf (bootstrap duplicates included).
    pub fn leaf_counts(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { count, .. } => Some(*count),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub mode: ForestMode,
    pub n_features: usize,
}

impl ForestModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mean =
            self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64;
        match self.mode {
            ForestMode::Regression => mean,
            ForestMode::Probability => clip_probability(mean),
        }
    }

    pub fn predict(&self, features: &DMatrix<f64>) -> Vec<f64> {
        let mut row = vec![0.0; features.ncols()];
        (0..features.nrows())
            .map(|i| {
                for (j, r) in row.iter_mut().enumerate() {
                    *r = features[(i, j)];
                }
                self.predict_row(&row)
            })
            .collect()
    }
}

pub fn fit_forest(
    features: &DMatrix<f64>,
    targets: &[f64],
    mode: ForestMode,
    params: &ForestParams,
    seed: u64,
) -> Result<ForestModel> {
    let n = targets.len();
    let p = features.ncols();
    if features.nrows() != n {
        return Err(Error::Shape(format!("features have {} rows, targets {n}", features.nrows())));
    }
    if params.n_trees == 0 || params.min_leaf == 0 {
        return Err(Error::InvalidArgument("n_trees and min_leaf must be positive".into()));
    }
    if n < 2 * params.min_leaf {
        return Err(Error::InsufficientData(format!(
            "forest needs at least {} rows, got {n}",
            2 * params.min_leaf
        )));
    }
    if mode == ForestMode::Probability && targets.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::InvalidArgument("probability forest targets must be 0 or 1".into()));
    }
    let mtry = params.mtry.unwrap_or_else(|| (p as f64).sqrt().ceil() as usize).clamp(1, p.max(1));

    // column-major copy for cache-friendly split scans
    let cols: Vec<Vec<f64>> = (0..p).map(|j| features.column(j).iter().copied().collect()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trees = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        let (rows, oob) = if params.bootstrap {
            let mut drawn = vec![false; n];
            let rows: Vec<usize> = (0..n)
                .map(|_| {
                    let i = rng.random_range(0..n);
                    drawn[i] = true;
                    i
                })
                .collect();
            let oob = (0..n).filter(|&i| !drawn[i]).collect();
            (rows, oob)
        } else {
            ((0..n).collect(), Vec::new())
        };
        let mut builder = TreeBuilder {
            cols: &cols,
            y: targets,
            params,
            mtry,
            rng: &mut rng,
            nodes: Vec::new(),
        };
        builder.grow(rows, 0);
        trees.push(Tree { nodes: builder.nodes, oob });
    }
    Ok(ForestModel { trees, mode, n_features: p })
}

struct TreeBuilder<'a> {
    cols: &'a [Vec<f64>],
    y: &'a [f64],
    params: &'a ForestParams,
    mtry: usize,
    rng: &'a mut ChaCha8Rng,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let m = rows.len();
        let mean = rows.iter().map(|&i| self.y[i]).sum::<f64>() / m as f64;
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: mean, count: m });
        if depth >= self.params.max_depth || m < 2 * self.params.min_leaf {
            return id;
        }
        if rows.iter().all(|&i| self.y[i] == self.y[rows[0]]) {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(&rows) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&i| self.cols[feature][i] <= threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }

    fn sample_features(&mut self) -> Vec<usize> {
        let p = self.cols.len();
        let mut all: Vec<usize> = (0..p).collect();
        for k in 0..self.mtry {
            let j = self.rng.random_range(k..p);
            all.swap(k, j);
        }
        all.truncate(self.mtry);
        all
    }

    fn best_split(&mut self, rows: &[usize]) -> Option<(usize, f64)> {
        let m = rows.len();
        if self.cols.is_empty() {
            return None;
        }
        let min_leaf = self.params.min_leaf;
        let total: f64 = rows.iter().map(|&i| self.y[i]).sum();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = rows.to_vec();
        for feature in self.sample_features() {
            let x = &self.cols[feature];
            order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
            let mut left_sum = 0.0;
            for k in 0..m - 1 {
                left_sum += self.y[order[k]];
                let nl = k + 1;
                let nr = m - nl;
                if nl < min_leaf {
                    continue;
                }
                if nr < min_leaf {
                    break;
                }
                let (xl, xr) = (x[order[k]], x[order[k + 1]]);
                if xl == xr {
                    continue;
                }
                // maximizing between-group sum of squares is equivalent to
                // minimizing within-group SSE
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64;
                if best.is_none_or(|(s, _, _)| score > s + 1e-12 * s.abs()) {
                    best = Some((score, feature, 0.5 * (xl + xr)));
                }
            }
        }
        let (score, feature, threshold) = best?;
        let parent = total * total / m as f64;
        (score > parent + 1e-12 * parent.abs()).then_some((feature, threshold))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy(n: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>());
        let y = (0..n).map(|i| if x[(i, 0)] > 0.5 { 2.0 } else { 0.0 } + 0.1 * x[(i, 1)]).collect();
        (x, y)
    }

    #[test]
    fn same_seed_same_fit() {
        let (x, y) = toy(80, 1);
        let params = ForestParams { n_trees: 20, ..Default::default() };
        let a = fit_forest(&x, &y, ForestMode::Regression, &params, 9).unwrap();
        let b = fit_forest(&x, &y, ForestMode::Regression, &params, 9).unwrap();
        assert_eq!(a.predict(&x), b.predict(&x));
    }

    #[test]
    fn constant_target_predicts_constant() {
        let (x, _) = toy(40, 2);
        let y = vec![4.0; 40];
        let f = fit_forest(&x, &y, ForestMode::Regression, &ForestParams::default(), 1).unwrap();
        assert!(f.predict(&x).iter().all(|&v| v == 4.0));
    }

    #[test]
    fn predictions_within_target_range() {
        let (x, y) = toy(100, 3);
        let f = fit_forest(&x, &y, ForestMode::Regression, &ForestParams::default(), 4).unwrap();
        let (lo, hi) = y.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(f.predict(&x).iter().all(|&v| v >= lo && v <= hi));
    }

    #[test]
    fn leaves_respect_min_leaf() {
        let (x, y) = toy(120, 5);
        let params = ForestParams { n_trees: 10, min_leaf: 7, ..Default::default() };
        let f = fit_forest(&x, &y, ForestMode::Regression, &params, 2).unwrap();
        for t in &f.trees {
            assert!(t.leaf_counts().iter().all(|&c| c >= 7));
        }
    }

    #[test]
    fn finds_the_step() {
        let (x, y) = toy(200, 6);
        let params = ForestParams { n_trees: 50, mtry: Some(2), ..Default::default() };
        let f = fit_forest(&x, &y, ForestMode::Regression, &params, 3).unwrap();
        let hi = f.predict_row(&[0.9, 0.5]);
        let lo = f.predict_row(&[0.1, 0.5]);
        assert!(hi > 1.8 && lo < 0.2, "{hi} {lo}");
    }

    #[test]
    fn probability_mode_is_clipped() {
        let (x, _) = toy(40, 7);
        let y = vec![1.0; 40];
        let f = fit_forest(&x, &y, ForestMode::Probability, &ForestParams::default(), 1).unwrap();
        assert!(f.predict(&x).iter().all(|&p| p == 1.0 - 1e-6));
    }

    #[test]
    fn single_split_by_hand() {
        let x = DMatrix::from_column_slice(10, 1, &[0., 0., 0., 0., 0., 1., 1., 1., 1., 1.]);
        let y = [0., 0., 0., 0., 0., 10., 10., 10., 10., 10.];
        let params =
            ForestParams { n_trees: 1, max_depth: 1, bootstrap: false, ..Default::default() };
        let f = fit_forest(&x, &y, ForestMode::Regression, &params, 0).unwrap();
        assert_eq!(f.predict(&x), y.to_vec());
        assert_eq!(f.predict_row(&[0.5]), 0.0);
        assert_eq!(f.predict_row(&[0.51]), 10.0);
    }

    #[test]
    fn too_few_rows() {
        let (x, y) = toy(9, 8);
        let r = fit_forest(&x, &y, ForestMode::Regression, &ForestParams::default(), 1);
        assert!(matches!(r, Err(Error::InsufficientData(_))));
    }

    #[test]
    fn oob_rows_are_not_drawn() {
        let (x, y) = toy(50, 9);
        let params = ForestParams { n_trees: 5, ..Default::default() };
        let f = fit_forest(&x, &y, ForestMode::Regression, &params, 5).unwrap();
        assert!(f.trees.iter().all(|t| !t.oob.is_empty() && t.oob.len() < 50));
        let nb = ForestParams { n_trees: 2, bootstrap: false, ..Default::default() };
        let g = fit_forest(&x, &y, ForestMode::Regression, &nb, 5).unwrap();
        assert!(g.trees.iter().all(|t| t.oob.is_empty()));
    }
}
