//! CART regression trees and the ensembles built from them.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Row-major feature matrix view.
#[derive(Debug, Clone, Copy)]
pub struct Rows<'a> {
    pub x: &'a [f64],
    pub n_features: usize,
}

impl<'a> Rows<'a> {
    pub fn new(x: &'a [f64], n_features: usize) -> Self {
        assert!(n_features > 0 && x.len() % n_features == 0, "feature matrix shape");
        Rows { x, n_features }
    }

    pub fn len(&self) -> usize {
        self.x.len() / self.n_features
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.x[i * self.n_features..(i + 1) * self.n_features]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Features considered per split; `None` uses all.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: None,
        }
    }
}

/// Flat tree: node `i` is a leaf when `feature[i] < 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    feature: Vec<i32>,
    /// Split threshold (go left when `x <= threshold`) or leaf value.
    value: Vec<f64>,
    left: Vec<u32>,
    right: Vec<u32>,
}

struct Builder<'a> {
    rows: Rows<'a>,
    y: &'a [f64],
    params: TreeParams,
    rng: ChaCha8Rng,
    tree: RegressionTree,
    scratch: Vec<(f64, f64)>,
}

impl Builder<'_> {
    fn push_leaf(&mut self, value: f64) -> usize {
        self.tree.feature.push(-1);
        self.tree.value.push(value);
        self.tree.left.push(0);
        self.tree.right.push(0);
        self.tree.feature.len() - 1
    }

    /// Best `(feature, threshold, sse_reduction)` over the candidate features.
    fn best_split(&mut self, idx: &[usize]) -> Option<(usize, f64)> {
        let p = self.rows.n_features;
        let features: Vec<usize> = match self.params.max_features {
            Some(m) if m < p => {
                let mut f = sample(&mut self.rng, p, m.max(1)).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..p).collect(),
        };
        let n = idx.len();
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let min_leaf = self.params.min_samples_leaf.max(1);
        let mut best: Option<(usize, f64, f64)> = None;
        for f in features {
            self.scratch.clear();
            self.scratch
                .extend(idx.iter().map(|&i| (self.rows.row(i)[f], self.y[i])));
            self.scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += self.scratch[k].1;
                let nl = k + 1;
                let nr = n - nl;
                if nl < min_leaf || nr < min_leaf || self.scratch[k].0 == self.scratch[k + 1].0 {
                    continue;
                }
                let right_sum = total - left_sum;
                // SSE reduction up to a constant: sum_l^2/n_l + sum_r^2/n_r.
                let score = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64;
                if best.is_none_or(|b| score > b.2) {
                    let threshold = 0.5 * (self.scratch[k].0 + self.scratch[k + 1].0);
                    best = Some((f, threshold, score));
                }
            }
        }
        let parent = total * total / n as f64;
        best.filter(|b| b.2 > parent * (1.0 + 1e-12) + 1e-12)
            .map(|b| (b.0, b.1))
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let n = idx.len();
        let mean = idx.iter().map(|&i| self.y[i]).sum::<f64>() / n as f64;
        let depth_ok = self.params.max_depth.is_none_or(|d| depth < d);
        if !depth_ok || n < self.params.min_samples_split.max(2) {
            return self.push_leaf(mean);
        }
        let Some((feature, threshold)) = self.best_split(idx) else {
            return self.push_leaf(mean);
        };
        let node = self.push_leaf(mean);
        self.tree.feature[node] = feature as i32;
        self.tree.value[node] = threshold;
        let mut k = 0;
        for j in 0..n {
            if self.rows.row(idx[j])[feature] <= threshold {
                idx.swap(k, j);
                k += 1;
            }
        }
        let (l, r) = idx.split_at_mut(k);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.tree.left[node] = left as u32;
        self.tree.right[node] = right as u32;
        node
    }
}

impl RegressionTree {
    /// Fits on the rows listed in `idx` (repeats allowed, as in bootstrap samples).
    pub fn fit(rows: Rows<'_>, y: &[f64], idx: &[usize], params: TreeParams, seed: u64) -> Self {
        assert!(!idx.is_empty(), "tree needs at least one sample");
        let mut b = Builder {
            rows,
            y,
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
            tree: RegressionTree {
                feature: Vec::new(),
                value: Vec::new(),
                left: Vec::new(),
                right: Vec::new(),
            },
            scratch: Vec::with_capacity(idx.len()),
        };
        let mut idx = idx.to_vec();
        b.grow(&mut idx, 0);
        b.tree
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        while self.feature[i] >= 0 {
            i = if x[self.feature[i] as usize] <= self.value[i] {
                self.left[i] as usize
            } else {
                self.right[i] as usize
            };
        }
        self.value[i]
    }

    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &RegressionTree, i: usize) -> usize {
            if t.feature[i] < 0 {
                0
            } else {
                1 + walk(t, t.left[i] as usize).max(walk(t, t.right[i] as usize))
            }
        }
        walk(self, 0)
    }
}

fn tree_seed(seed: u64, t: usize) -> u64 {
    crate::seeds::derive(seed, &[t as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub tree: TreeParams,
    pub bootstrap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<RegressionTree>,
}

impl RandomForest {
    pub fn fit(rows: Rows<'_>, y: &[f64], params: &ForestParams, seed: u64) -> Self {
        let n = rows.len();
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let s = tree_seed(seed, t);
                let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0x5eed);
                let idx: Vec<usize> = if params.bootstrap {
                    (0..n).map(|_| rng.gen_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                RegressionTree::fit(rows, y, &idx, params.tree, s)
            })
            .collect();
        RandomForest { trees }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostingParams {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub tree: TreeParams,
    /// Fraction of rows drawn (without replacement) for each tree.
    pub subsample: f64,
}

/// Least-squares gradient boosting: each tree fits the current residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoosting {
    pub init: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegressionTree>,
}

impl GradientBoosting {
    pub fn fit(rows: Rows<'_>, y: &[f64], params: &BoostingParams, seed: u64) -> Self {
        let n = rows.len();
        let init = y.iter().sum::<f64>() / n as f64;
        let mut pred = vec![init; n];
        let mut residual = vec![0.0; n];
        let mut trees = Vec::with_capacity(params.n_trees);
        let m = ((params.subsample * n as f64).round() as usize).clamp(1, n);
        for t in 0..params.n_trees {
            for i in 0..n {
                residual[i] = y[i] - pred[i];
            }
            let s = tree_seed(seed, t);
            let idx: Vec<usize> = if m < n {
                let mut v = sample(&mut ChaCha8Rng::seed_from_u64(s ^ 0xb005), n, m).into_vec();
                v.sort_unstable();
                v
            } else {
                (0..n).collect()
            };
            let tree = RegressionTree::fit(rows, &residual, &idx, params.tree, s);
            for (i, p) in pred.iter_mut().enumerate() {
                *p += params.learning_rate * tree.predict(rows.row(i));
            }
            trees.push(tree);
        }
        GradientBoosting {
            init,
            learning_rate: params.learning_rate,
            trees,
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.init + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}
