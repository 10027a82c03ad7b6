//! Random-forest regression built from CART trees.
//!
//! Every tree draws from its own ChaCha stream selected by `(seed, tree
//! index)`, so a fitted forest does not depend on how many worker threads
//! trained it.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForestError {
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("bad forest configuration: {0}")]
    BadConfig(String),
    #[error("{rows} rows but {targets} targets")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("expected {expected} columns, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until the other stopping rules apply.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features tried per node; `None` means `⌈p/3⌉`.
    pub mtry: Option<usize>,
    pub seed: u64,
    /// Draw a bootstrap sample per tree; when off every tree sees all rows once.
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: None,
            min_leaf: 2,
            mtry: None,
            seed: 0,
            bootstrap: true,
        }
    }
}

impl ForestConfig {
    pub fn resolved_mtry(&self, p: usize) -> usize {
        self.mtry.unwrap_or_else(|| p.div_ceil(3)).max(1)
    }

    fn validate(&self, p: usize) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::BadConfig("n_trees must be positive".into()));
        }
        if self.min_leaf == 0 {
            return Err(ForestError::BadConfig("min_leaf must be at least 1".into()));
        }
        if self.max_depth == Some(0) {
            return Err(ForestError::BadConfig("max_depth must be positive".into()));
        }
        if let Some(m) = self.mtry {
            if m == 0 || m > p {
                return Err(ForestError::BadConfig(format!("mtry = {m} must lie in 1..={p}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
        count: usize,
    },
}

/// Nodes in depth-first order; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict_row(&self, row: impl Fn(usize) -> f64) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                TreeNode::Leaf { value, .. } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row(feature) <= threshold { left } else { right },
            }
        }
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub config: ForestConfig,
    pub n_features: usize,
    pub oob_rmse: Option<f64>,
    pub importances: Vec<f64>,
}

struct Grown {
    tree: Tree,
    importance: Vec<f64>,
    in_bag: Vec<bool>,
}

struct Grower<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    min_leaf: usize,
    max_depth: Option<usize>,
    mtry: usize,
}

/// Rows awaiting a node, their depth, and the parent slot to patch
/// (`true` for the left child).
type Pending = (Vec<usize>, usize, Option<(usize, bool)>);

impl Grower<'_> {
    fn grow(&self, mut rows: Vec<usize>, rng: &mut ChaCha8Rng) -> (Tree, Vec<f64>) {
        let mut nodes: Vec<TreeNode> = Vec::new();
        let mut importance = vec![0.0; self.x.ncols()];
        let mut stack: Vec<Pending> =
            vec![(std::mem::take(&mut rows), 0, None)];
        while let Some((rows, depth, parent)) = stack.pop() {
            let id = nodes.len();
            if let Some((p, is_left)) = parent {
                if let TreeNode::Split { left, right, .. } = &mut nodes[p] {
                    if is_left {
                        *left = id;
                    } else {
                        *right = id;
                    }
                }
            }
            match self.best_split(&rows, depth, rng) {
                Some(split) => {
                    importance[split.feature] += split.reduction;
                    nodes.push(TreeNode::Split {
                        feature: split.feature,
                        threshold: split.threshold,
                        left: usize::MAX,
                        right: usize::MAX,
                    });
                    let (l, r): (Vec<usize>, Vec<usize>) = rows
                        .iter()
                        .partition(|&&i| self.x[(i, split.feature)] <= split.threshold);
                    // right pushed first so the left subtree is numbered next
                    stack.push((r, depth + 1, Some((id, false))));
                    stack.push((l, depth + 1, Some((id, true))));
                }
                None => {
                    let value = rows.iter().map(|&i| self.y[i]).sum::<f64>() / rows.len() as f64;
                    nodes.push(TreeNode::Leaf {
                        value,
                        count: rows.len(),
                    });
                }
            }
        }
        (Tree { nodes }, importance)
    }

    fn best_split(&self, rows: &[usize], depth: usize, rng: &mut ChaCha8Rng) -> Option<Split> {
        let n = rows.len();
        if n < 2 * self.min_leaf || self.max_depth.is_some_and(|d| depth >= d) {
            return None;
        }
        let mean = rows.iter().map(|&i| self.y[i]).sum::<f64>() / n as f64;
        let node_sse: f64 = rows.iter().map(|&i| (self.y[i] - mean).powi(2)).sum();
        if node_sse <= 0.0 {
            return None;
        }

        let mut features = index::sample(rng, self.x.ncols(), self.mtry).into_vec();
        features.sort_unstable();

        let mut best: Option<Split> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
        for &f in &features {
            pairs.clear();
            pairs.extend(rows.iter().map(|&i| (self.x[(i, f)], self.y[i] - mean)));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let total: f64 = pairs.iter().map(|p| p.1).sum();
            let total_sq: f64 = pairs.iter().map(|p| p.1 * p.1).sum();
            let mut sum_l = 0.0;
            let mut sq_l = 0.0;
            for i in 0..n - 1 {
                sum_l += pairs[i].1;
                sq_l += pairs[i].1 * pairs[i].1;
                let n_l = i + 1;
                let n_r = n - n_l;
                if n_l < self.min_leaf || n_r < self.min_leaf || pairs[i].0 >= pairs[i + 1].0 {
                    continue;
                }
                let sum_r = total - sum_l;
                let sse_l = sq_l - sum_l * sum_l / n_l as f64;
                let sse_r = (total_sq - sq_l) - sum_r * sum_r / n_r as f64;
                let reduction = node_sse - (sse_l + sse_r);
                if best.as_ref().is_none_or(|b| reduction > b.reduction) {
                    best = Some(Split {
                        feature: f,
                        threshold: 0.5 * (pairs[i].0 + pairs[i + 1].0),
                        reduction,
                    });
                }
            }
        }
        best.filter(|b| b.reduction > 1e-12 * node_sse)
    }
}

struct Split {
    feature: usize,
    threshold: f64,
    reduction: f64,
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

fn grow_tree(grower: &Grower<'_>, cfg: &ForestConfig, t: usize) -> Grown {
    let n = grower.y.len();
    let mut rng = tree_rng(cfg.seed, t);
    let rows: Vec<usize> = if cfg.bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut in_bag = vec![false; n];
    for &i in &rows {
        in_bag[i] = true;
    }
    let (tree, importance) = grower.grow(rows, &mut rng);
    Grown {
        tree,
        importance,
        in_bag,
    }
}

/// Fits on the global rayon pool.
pub fn fit_forest(x: &DMatrix<f64>, y: &[f64], cfg: &ForestConfig) -> Result<ForestModel, ForestError> {
    fit_forest_with_workers(x, y, cfg, None)
}

/// Fits with `workers` threads (`None` uses the global pool). The result is
/// identical for every worker count.
pub fn fit_forest_with_workers(
    x: &DMatrix<f64>,
    y: &[f64],
    cfg: &ForestConfig,
    workers: Option<usize>,
) -> Result<ForestModel, ForestError> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(ForestError::LengthMismatch { rows: n, targets: y.len() });
    }
    if n < 2 {
        return Err(ForestError::TooFewRows(n));
    }
    cfg.validate(p)?;
    let mtry = cfg.resolved_mtry(p);
    let config = ForestConfig {
        mtry: Some(mtry),
        ..cfg.clone()
    };
    let grower = Grower {
        x,
        y,
        min_leaf: cfg.min_leaf,
        max_depth: cfg.max_depth,
        mtry,
    };
    let train = || -> Vec<Grown> {
        (0..cfg.n_trees)
            .into_par_iter()
            .map(|t| grow_tree(&grower, &config, t))
            .collect()
    };
    let grown = match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| ForestError::BadConfig(e.to_string()))?
            .install(train),
        None => train(),
    };

    let mut importances = vec![0.0; p];
    for g in &grown {
        for (acc, v) in importances.iter_mut().zip(&g.importance) {
            *acc += v;
        }
    }
    let total: f64 = importances.iter().sum();
    if total > 0.0 {
        importances.iter_mut().for_each(|v| *v /= total);
    }

    let oob_rmse = if cfg.bootstrap {
        oob_rmse(x, y, &grown)
    } else {
        None
    };
    Ok(ForestModel {
        trees: grown.into_iter().map(|g| g.tree).collect(),
        config,
        n_features: p,
        oob_rmse,
        importances,
    })
}

fn oob_rmse(x: &DMatrix<f64>, y: &[f64], grown: &[Grown]) -> Option<f64> {
    let mut sq = 0.0;
    for (i, &target) in y.iter().enumerate() {
        let mut sum = 0.0;
        let mut count = 0usize;
        for g in grown.iter().filter(|g| !g.in_bag[i]) {
            sum += g.tree.predict_row(|f| x[(i, f)]);
            count += 1;
        }
        if count == 0 {
            return None;
        }
        sq += (sum / count as f64 - target).powi(2);
    }
    Some((sq / y.len() as f64).sqrt())
}

impl ForestModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>, ForestError> {
        if x.ncols() != self.n_features {
            return Err(ForestError::ShapeMismatch {
                expected: self.n_features,
                got: x.ncols(),
            });
        }
        Ok((0..x.nrows())
            .into_par_iter()
            .map(|r| {
                let (mut sum, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
                for tree in &self.trees {
                    let v = tree.predict_row(|f| x[(r, f)]);
                    sum += v;
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                // the mean of leaf values cannot leave their range; clamp rounding
                (sum / self.trees.len() as f64).clamp(lo, hi)
            })
            .collect())
    }

    pub fn feature_importances(&self) -> &[f64] {
        &self.importances
    }
}

pub fn predict_forest(model: &ForestModel, x: &DMatrix<f64>) -> Result<Vec<f64>, ForestError> {
    model.predict(x)
}

pub fn feature_importances(model: &ForestModel) -> Vec<f64> {
    model.importances.clone()
}

/// Increase in RMSE on `(x, y)` when each column is shuffled in turn.
pub fn permutation_importances(
    model: &ForestModel,
    x: &DMatrix<f64>,
    y: &[f64],
    seed: u64,
) -> Result<Vec<f64>, ForestError> {
    if y.len() != x.nrows() {
        return Err(ForestError::LengthMismatch { rows: x.nrows(), targets: y.len() });
    }
    let rmse = |pred: &[f64]| {
        (pred.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64).sqrt()
    };
    let base = rmse(&model.predict(x)?);
    (0..x.ncols())
        .map(|f| {
            let mut rng = tree_rng(seed, f);
            let mut shuffled = x.clone();
            let perm = index::sample(&mut rng, x.nrows(), x.nrows()).into_vec();
            for (r, &src) in perm.iter().enumerate() {
                shuffled[(r, f)] = x[(src, f)];
            }
            Ok(rmse(&model.predict(&shuffled)?) - base)
        })
        .collect()
}
