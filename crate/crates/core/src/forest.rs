//! CART regression trees and bagged forests with out-of-bag bookkeeping.
//!
//! Trees are grown on bootstrap samples. At each node `mtry` candidate
//! features are drawn without replacement and every midpoint between adjacent
//! distinct values is scored by SSE reduction. Equal scores keep the lowest
//! feature index, then the lowest threshold.
//!
//! Features are passed column-major as `&[&[f64]]`: `x[f][i]` is feature `f`
//! of row `i`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::stochastic::{bootstrap_with, SeedSpec, StreamRng};

/// Nodes whose response variance is at or below this are leaves.
const PURE_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Candidate features per split; `None` means `floor(sqrt(q))`, at least 1.
    pub mtry: Option<usize>,
    pub min_node_size: usize,
    pub max_depth: Option<usize>,
    pub seed: SeedSpec,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            mtry: None,
            min_node_size: 5,
            max_depth: None,
            seed: SeedSpec::new(0),
        }
    }
}

impl ForestParams {
    pub fn resolve_mtry(&self, n_features: usize) -> Result<usize> {
        let mtry = self
            .mtry
            .unwrap_or_else(|| ((n_features as f64).sqrt().floor() as usize).max(1));
        if mtry == 0 || mtry > n_features {
            return Err(Error::InvalidInput(format!(
                "mtry {mtry} outside 1..={n_features}"
            )));
        }
        Ok(mtry)
    }

    fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidInput("n_trees must be at least 1".into()));
        }
        if self.min_node_size == 0 {
            return Err(Error::InvalidInput(
                "min_node_size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        prediction: f64,
        n_samples: usize,
    },
}

/// A fitted tree; `nodes[0]` is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }

    /// Prediction for row `row` of the column-major features `x`.
    pub fn predict_row(&self, x: &[&[f64]], row: usize) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                TreeNode::Leaf { prediction, .. } => return prediction,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[feature][row] <= threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }
}

fn check_features(x: &[&[f64]], n: usize) -> Result<()> {
    if x.is_empty() {
        return Err(Error::InvalidInput(
            "at least one feature is required".into(),
        ));
    }
    if let Some((f, c)) = x.iter().enumerate().find(|(_, c)| c.len() != n) {
        return Err(Error::Shape(format!(
            "feature {f} has {} rows, expected {n}",
            c.len()
        )));
    }
    Ok(())
}

/// Grows one tree on the rows listed in `sample` (duplicates allowed).
/// `seed` drives the per-node feature draws.
pub fn fit_tree(
    x: &[&[f64]],
    y: &[f64],
    sample: &[usize],
    params: &ForestParams,
    seed: &SeedSpec,
) -> Result<Tree> {
    params.validate()?;
    check_features(x, y.len())?;
    if sample.is_empty() {
        return Err(Error::InvalidInput("empty training sample".into()));
    }
    if let Some(&i) = sample.iter().find(|&&i| i >= y.len()) {
        return Err(Error::InvalidInput(format!(
            "sample index {i} out of range"
        )));
    }
    let mtry = params.resolve_mtry(x.len())?;
    Ok(TreeBuilder::new(x, y, sample).grow(params, mtry, &mut seed.rng()))
}

/// Scratch state for growing a single tree.
///
/// Every feature keeps its own ordering of the sample positions. A node owns
/// the same index range `lo..hi` in every ordering; splitting a node stably
/// partitions each ordering's range, so child ranges stay sorted and no node
/// ever re-sorts.
struct TreeBuilder {
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    order: Vec<Vec<u32>>,
    goes_left: Vec<bool>,
    scratch: Vec<u32>,
}

struct Pending {
    node: usize,
    lo: usize,
    hi: usize,
    depth: usize,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl TreeBuilder {
    fn new(x: &[&[f64]], y: &[f64], sample: &[usize]) -> Self {
        let m = sample.len();
        let xs: Vec<Vec<f64>> = x
            .iter()
            .map(|c| sample.iter().map(|&i| c[i]).collect())
            .collect();
        let ys = sample.iter().map(|&i| y[i]).collect();
        let order = xs
            .iter()
            .map(|c| {
                let mut o: Vec<u32> = (0..m as u32).collect();
                o.sort_by(|&a, &b| c[a as usize].total_cmp(&c[b as usize]));
                o
            })
            .collect();
        Self {
            xs,
            ys,
            order,
            goes_left: vec![false; m],
            scratch: Vec::with_capacity(m),
        }
    }

    fn grow(mut self, params: &ForestParams, mtry: usize, rng: &mut StreamRng) -> Tree {
        let q = self.xs.len();
        let mut candidates: Vec<usize> = (0..q).collect();
        let mut nodes = vec![TreeNode::Leaf {
            prediction: 0.0,
            n_samples: 0,
        }];
        let mut stack = vec![Pending {
            node: 0,
            lo: 0,
            hi: self.ys.len(),
            depth: 0,
        }];

        while let Some(Pending {
            node,
            lo,
            hi,
            depth,
        }) = stack.pop()
        {
            let n = hi - lo;
            let members = &self.order[0][lo..hi];
            let sum: f64 = members.iter().map(|&k| self.ys[k as usize]).sum();
            let mean = sum / n as f64;
            let sse: f64 = members
                .iter()
                .map(|&k| (self.ys[k as usize] - mean).powi(2))
                .sum();

            let can_split = n >= 2 * params.min_node_size
                && sse / n as f64 > PURE_VARIANCE
                && params.max_depth.map_or(true, |d| depth < d);
            let best = if can_split {
                // partial Fisher-Yates: the first mtry entries become the draw
                for i in 0..mtry {
                    let j = rng.gen_range(i..q);
                    candidates.swap(i, j);
                }
                let mut chosen = candidates[..mtry].to_vec();
                chosen.sort_unstable();
                self.best_split(&chosen, lo, hi, mean)
            } else {
                None
            };

            match best {
                Some(split) => {
                    let n_left = self.partition(split.feature, split.threshold, lo, hi);
                    let left = nodes.len();
                    let right = left + 1;
                    nodes.push(TreeNode::Leaf {
                        prediction: 0.0,
                        n_samples: 0,
                    });
                    nodes.push(TreeNode::Leaf {
                        prediction: 0.0,
                        n_samples: 0,
                    });
                    nodes[node] = TreeNode::Split {
                        feature: split.feature,
                        threshold: split.threshold,
                        left,
                        right,
                    };
                    stack.push(Pending {
                        node: right,
                        lo: lo + n_left,
                        hi,
                        depth: depth + 1,
                    });
                    stack.push(Pending {
                        node: left,
                        lo,
                        hi: lo + n_left,
                        depth: depth + 1,
                    });
                }
                None => {
                    nodes[node] = TreeNode::Leaf {
                        prediction: mean,
                        n_samples: n,
                    }
                }
            }
        }
        Tree { nodes }
    }

    /// Best (feature, threshold) by SSE reduction over the node `lo..hi`.
    ///
    /// With responses centred on the node mean the reduction for a left child
    /// of size `nl` with centred sum `s` is `s² · n / (nl · nr)`.
    fn best_split(&self, features: &[usize], lo: usize, hi: usize, mean: f64) -> Option<BestSplit> {
        let n = hi - lo;
        let mut best: Option<BestSplit> = None;
        for &f in features {
            let xs = &self.xs[f];
            let ord = &self.order[f][lo..hi];
            let mut left_sum = 0.0;
            for t in 0..n - 1 {
                let k = ord[t] as usize;
                left_sum += self.ys[k] - mean;
                let (a, b) = (xs[k], xs[ord[t + 1] as usize]);
                if a == b {
                    continue;
                }
                let nl = (t + 1) as f64;
                let nr = (n - t - 1) as f64;
                let score = left_sum * left_sum * n as f64 / (nl * nr);
                if score > 0.0 && best.as_ref().map_or(true, |s| score > s.score) {
                    let mut threshold = a + (b - a) / 2.0;
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        best
    }

    /// Stable-partitions every feature ordering of `lo..hi`; returns the left size.
    fn partition(&mut self, feature: usize, threshold: f64, lo: usize, hi: usize) -> usize {
        let mut n_left = 0;
        for &k in &self.order[feature][lo..hi] {
            let left = self.xs[feature][k as usize] <= threshold;
            self.goes_left[k as usize] = left;
            n_left += left as usize;
        }
        for ord in self.order.iter_mut() {
            self.scratch.clear();
            let mut w = lo;
            for r in lo..hi {
                let k = ord[r];
                if self.goes_left[k as usize] {
                    ord[w] = k;
                    w += 1;
                } else {
                    self.scratch.push(k);
                }
            }
            ord[w..hi].copy_from_slice(&self.scratch);
        }
        n_left
    }
}

/// A bagged ensemble. OOB predictions are kept as per-row sums and counts so
/// that forests grown separately on the same data pool exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<Tree>,
    n_features: usize,
    oob_sum: Vec<f64>,
    oob_count: Vec<u32>,
}

/// Fits `params.n_trees` trees; tree `t` draws from `params.seed.child(t)`.
pub fn fit_forest(x: &[&[f64]], y: &[f64], params: &ForestParams) -> Result<Forest> {
    params.validate()?;
    let n = y.len();
    check_features(x, n)?;
    if n == 0 {
        return Err(Error::InvalidInput("empty training sample".into()));
    }
    let mtry = params.resolve_mtry(x.len())?;
    let mut forest = Forest {
        trees: Vec::with_capacity(params.n_trees),
        n_features: x.len(),
        oob_sum: vec![0.0; n],
        oob_count: vec![0; n],
    };
    for t in 0..params.n_trees {
        let mut rng = params.seed.child(t as u64).rng();
        let boot = bootstrap_with(n, &mut rng);
        let tree = TreeBuilder::new(x, y, &boot.indices).grow(params, mtry, &mut rng);
        for &i in &boot.out_of_bag {
            forest.oob_sum[i] += tree.predict_row(x, i);
            forest.oob_count[i] += 1;
        }
        forest.trees.push(tree);
    }
    Ok(forest)
}

impl Forest {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_train(&self) -> usize {
        self.oob_count.len()
    }

    pub fn oob_counts(&self) -> &[u32] {
        &self.oob_count
    }

    /// Mean prediction over the trees for which each row was out of bag.
    pub fn oob_predictions(&self) -> Vec<Option<f64>> {
        self.oob_sum
            .iter()
            .zip(&self.oob_count)
            .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
            .collect()
    }

    /// Unweighted mean of the tree predictions for each row of `x`.
    pub fn predict(&self, x: &[&[f64]]) -> Result<Vec<f64>> {
        if x.len() != self.n_features {
            return Err(Error::Shape(format!(
                "forest expects {} features, got {}",
                self.n_features,
                x.len()
            )));
        }
        let m = x.first().map_or(0, |c| c.len());
        check_features(x, m)?;
        let k = self.trees.len() as f64;
        Ok((0..m)
            .map(|i| self.trees.iter().map(|t| t.predict_row(x, i)).sum::<f64>() / k)
            .collect())
    }
}

/// Concatenates the parts' trees in order and pools their OOB accumulators.
pub fn merge_forests(parts: Vec<Forest>) -> Result<Forest> {
    let mut parts = parts.into_iter();
    let mut merged = parts
        .next()
        .ok_or_else(|| Error::InvalidInput("nothing to merge".into()))?;
    for part in parts {
        if part.n_features != merged.n_features || part.n_train() != merged.n_train() {
            return Err(Error::Shape(format!(
                "cannot merge a forest trained on {}x{} into one trained on {}x{}",
                part.n_train(),
                part.n_features,
                merged.n_train(),
                merged.n_features
            )));
        }
        for (acc, s) in merged.oob_sum.iter_mut().zip(&part.oob_sum) {
            *acc += s;
        }
        for (acc, c) in merged.oob_count.iter_mut().zip(&part.oob_count) {
            *acc += c;
        }
        merged.trees.extend(part.trees);
    }
    Ok(merged)
}

/// Components of the OOB error: mean squared OOB residual and the sample
/// variance of the response, both over rows that have an OOB prediction.
pub(crate) fn oob_error_parts(forest: &Forest, y_true: &[f64]) -> Result<(f64, f64)> {
    if y_true.len() != forest.n_train() {
        return Err(Error::Shape(format!(
            "{} responses for a forest trained on {} rows",
            y_true.len(),
            forest.n_train()
        )));
    }
    let pairs: Vec<(f64, f64)> = forest
        .oob_predictions()
        .into_iter()
        .zip(y_true)
        .filter_map(|(p, &y)| p.map(|p| (p, y)))
        .collect();
    if pairs.len() < 2 {
        return Err(Error::OobUnavailable);
    }
    let m = pairs.len() as f64;
    let mse = pairs.iter().map(|(p, y)| (p - y).powi(2)).sum::<f64>() / m;
    let mean = pairs.iter().map(|(_, y)| y).sum::<f64>() / m;
    let var = pairs.iter().map(|(_, y)| (y - mean).powi(2)).sum::<f64>() / (m - 1.0);
    Ok((mse, var))
}

/// NRMSE of the OOB predictions against `y_true`.
pub fn oob_nrmse(forest: &Forest, y_true: &[f64]) -> Result<f64> {
    let (mse, var) = oob_error_parts(forest, y_true)?;
    if var == 0.0 {
        return if mse == 0.0 {
            Ok(0.0)
        } else {
            Err(Error::DegenerateNrmse)
        };
    }
    Ok((mse / var).sqrt())
}
