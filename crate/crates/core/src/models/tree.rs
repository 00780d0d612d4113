use serde::{Deserialize, Serialize};

use super::DecisionRegion;
use crate::domain::{ConstraintSet, Dataset, LinearIneq, Vector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    /// `x[feature] ≤ threshold` descends to `left`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        label: usize,
    },
}

/// Axis-aligned binary tree stored as a flat arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub nodes: Vec<TreeNode>,
    pub max_depth: usize,
    pub n_classes: usize,
    pub dim: usize,
}

impl TreeModel {
    fn leaf_of(&self, x: &Vector) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { .. } => return i,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn predict(&self, x: &Vector) -> usize {
        match self.nodes[self.leaf_of(x)] {
            TreeNode::Leaf { label } => label,
            TreeNode::Split { .. } => unreachable!("leaf_of stops at leaves"),
        }
    }

    /// Longest root-to-leaf path, counted in splits.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// One box per target leaf, holding only the tightest bound per side and
    /// feature. Region ids are leaf node indices.
    pub(crate) fn regions(&self, target: usize) -> Vec<DecisionRegion> {
        let mut out = Vec::new();
        let lower = vec![f64::NEG_INFINITY; self.dim];
        let upper = vec![f64::INFINITY; self.dim];
        self.collect(0, target, lower, upper, &mut out);
        out
    }

    fn collect(
        &self,
        i: usize,
        target: usize,
        lower: Vec<f64>,
        upper: Vec<f64>,
        out: &mut Vec<DecisionRegion>,
    ) {
        match self.nodes[i] {
            TreeNode::Leaf { label } => {
                if label != target {
                    return;
                }
                let mut cs = ConstraintSet::new(self.dim);
                for f in 0..self.dim {
                    if upper[f].is_finite() {
                        let mut n = Vector::zeros(self.dim);
                        n[f] = 1.0;
                        cs.linear.push(LinearIneq::new(n, upper[f]));
                    }
                    if lower[f].is_finite() {
                        let mut n = Vector::zeros(self.dim);
                        n[f] = -1.0;
                        cs.linear.push(LinearIneq::new(n, -lower[f]));
                    }
                }
                out.push(DecisionRegion {
                    id: i,
                    constraints: cs,
                });
            }
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let mut up = upper.clone();
                up[feature] = up[feature].min(threshold);
                self.collect(left, target, lower.clone(), up, out);
                let mut lo = lower;
                lo[feature] = lo[feature].max(threshold);
                self.collect(right, target, lo, upper, out);
            }
        }
    }
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn majority(counts: &[usize]) -> usize {
    // max_by_key keeps the last maximum; scan manually for the smallest label.
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

struct Builder<'a> {
    data: &'a Dataset,
    max_depth: usize,
    nodes: Vec<TreeNode>,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.data.n_classes];
        for &i in idx {
            c[self.data.samples[i].label] += 1;
        }
        c
    }

    /// Lowest weighted Gini; ties keep the lower feature, then the smaller threshold.
    fn best_split(&self, idx: &[usize]) -> Option<(usize, f64)> {
        let k = self.data.n_classes;
        let n = idx.len();
        let total = self.counts(idx);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = idx.to_vec();
        for f in 0..self.data.dim() {
            let val = |i: usize| self.data.samples[i].features[f];
            sorted.sort_by(|&a, &b| val(a).total_cmp(&val(b)));
            let mut left = vec![0usize; k];
            for pos in 0..n - 1 {
                left[self.data.samples[sorted[pos]].label] += 1;
                let (a, b) = (val(sorted[pos]), val(sorted[pos + 1]));
                if a == b {
                    continue;
                }
                let nl = pos + 1;
                let right: Vec<usize> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
                let score = (nl as f64 * gini(&left, nl) + (n - nl) as f64 * gini(&right, n - nl))
                    / n as f64;
                let mid = a + (b - a) / 2.0;
                let threshold = if mid < b { mid } else { a };
                let better = match best {
                    None => true,
                    Some((s, _, _)) => score < s - 1e-12,
                };
                if better {
                    best = Some((score, f, threshold));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&idx);
        let at = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            label: majority(&counts),
        });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.max_depth {
            return at;
        }
        let Some((feature, threshold)) = self.best_split(&idx) else {
            return at;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.data.samples[i].features[feature] <= threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[at] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        at
    }
}

/// Greedy CART with Gini impurity. Splits are placed at midpoints between
/// adjacent distinct values; leaves predict the majority class, smallest
/// label on ties.
pub fn fit_tree(data: &Dataset, max_depth: usize) -> Result<TreeModel> {
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let mut b = Builder {
        data,
        max_depth,
        nodes: Vec::new(),
    };
    b.grow((0..data.len()).collect(), 0);
    Ok(TreeModel {
        nodes: b.nodes,
        max_depth,
        n_classes: data.n_classes,
        dim: data.dim(),
    })
}
