//! Random forest of CART trees split on Gini impurity.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturesPerSplit {
    Sqrt,
    Log2,
    All,
}

impl FeaturesPerSplit {
    pub fn count(self, n_features: usize) -> usize {
        let n = n_features as f64;
        let m = match self {
            FeaturesPerSplit::Sqrt => n.sqrt().round() as usize,
            FeaturesPerSplit::Log2 => n.log2().round() as usize,
            FeaturesPerSplit::All => n_features,
        };
        m.clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RfParams {
    pub n_trees: usize,
    /// `None` grows trees until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub features_per_split: FeaturesPerSplit,
    pub seed: u64,
}

impl Default for RfParams {
    fn default() -> Self {
        Self {
            n_trees: 20,
            max_depth: None,
            min_samples_split: 2,
            features_per_split: FeaturesPerSplit::Sqrt,
            seed: 0,
        }
    }
}

impl RfParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::invalid("random forest needs at least one tree"));
        }
        if self.min_samples_split < 2 {
            return Err(Error::invalid("min_samples_split must be >= 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf {
        /// Training rows per class that reached this leaf.
        class_counts: Vec<u32>,
    },
    Split {
        feature: usize,
        /// Rows with `x[feature] <= threshold` go left.
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn leaf_counts(&self, row: &[f64]) -> &[u32] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { class_counts } => return class_counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

fn gini(counts: &[u32], total: u32) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [usize],
    n_classes: usize,
    params: &'a RfParams,
    mtry: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<u32> {
        let mut c = vec![0u32; self.n_classes];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    fn leaf(&mut self, counts: Vec<u32>) -> usize {
        self.nodes.push(Node::Leaf {
            class_counts: counts,
        });
        self.nodes.len() - 1
    }

    fn best_split(&self, idx: &mut [usize], rng: &mut Rng, parent: &[u32]) -> Option<(usize, f64)> {
        let n_features = self.x.cols();
        let mut features: Vec<usize> = (0..n_features).collect();
        for i in 0..self.mtry {
            let j = rng.random_range(i..n_features);
            features.swap(i, j);
        }
        let total = idx.len() as u32;
        let parent_impurity = gini(parent, total);
        let mut best: Option<(usize, f64, f64)> = None;
        for &f in &features[..self.mtry] {
            idx.sort_by(|&a, &b| self.x[(a, f)].total_cmp(&self.x[(b, f)]).then(a.cmp(&b)));
            let mut left = vec![0u32; self.n_classes];
            let mut right = parent.to_vec();
            for pos in 0..idx.len() - 1 {
                let label = self.y[idx[pos]];
                left[label] += 1;
                right[label] -= 1;
                let (lo, hi) = (self.x[(idx[pos], f)], self.x[(idx[pos + 1], f)]);
                if lo == hi {
                    continue;
                }
                let nl = pos as u32 + 1;
                let nr = total - nl;
                let weighted =
                    (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / total as f64;
                let gain = parent_impurity - weighted;
                if gain > 1e-12 && best.is_none_or(|b| gain > b.2) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some((f, threshold, gain));
                }
            }
        }
        best.map(|(f, t, _)| (f, t))
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize, rng: &mut Rng) -> usize {
        let counts = self.counts(idx);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_capped = self.params.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || idx.len() < self.params.min_samples_split {
            return self.leaf(counts);
        }
        let Some((feature, threshold)) = self.best_split(idx, rng, &counts) else {
            return self.leaf(counts);
        };
        let mut left: Vec<usize> = idx.iter().copied().filter(|&i| self.x[(i, feature)] <= threshold).collect();
        let mut right: Vec<usize> = idx.iter().copied().filter(|&i| self.x[(i, feature)] > threshold).collect();
        let at = self.nodes.len();
        self.nodes.push(Node::Split {
            feature,
            threshold,
            left: 0,
            right: 0,
        });
        let l = self.grow(&mut left, depth + 1, rng);
        let r = self.grow(&mut right, depth + 1, rng);
        if let Node::Split { left, right, .. } = &mut self.nodes[at] {
            *left = l;
            *right = r;
        }
        at
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub n_classes: usize,
    pub n_features: usize,
    pub trees: Vec<DecisionTree>,
}

impl RandomForest {
    /// Each tree sees a bootstrap sample drawn from its own child seed, so the
    /// forest is identical regardless of how many threads build it.
    pub fn fit(x: &Matrix, y: &[usize], n_classes: usize, params: &RfParams) -> Result<Self> {
        params.validate()?;
        if x.rows() != y.len() {
            return Err(Error::shape("feature rows and labels differ in length"));
        }
        if x.rows() < 2 {
            return Err(Error::invalid("random forest needs at least 2 rows"));
        }
        if x.cols() == 0 {
            return Err(Error::invalid("random forest needs at least one feature"));
        }
        let mut present = vec![false; n_classes];
        for &l in y {
            *present.get_mut(l).ok_or(Error::LabelOutOfRange { label: l, n_classes })? = true;
        }
        if present.iter().filter(|&&p| p).count() < 2 {
            return Err(Error::invalid("random forest needs at least 2 classes"));
        }

        let mtry = params.features_per_split.count(x.cols());
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = seed::rng(seed::child_seed(params.seed, &format!("tree/{t}")));
                let n = x.rows();
                let mut sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let mut b = Builder {
                    x,
                    y,
                    n_classes,
                    params,
                    mtry,
                    nodes: Vec::new(),
                };
                b.grow(&mut sample, 0, &mut rng);
                DecisionTree { nodes: b.nodes }
            })
            .collect();
        Ok(Self {
            n_classes,
            n_features: x.cols(),
            trees,
        })
    }

    /// Mean of the per-tree normalized leaf distributions.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.n_features {
            return Err(Error::shape(format!(
                "forest expects {} features, got {}",
                self.n_features,
                x.cols()
            )));
        }
        let mut out = Matrix::zeros(x.rows(), self.n_classes);
        let scale = 1.0 / self.trees.len() as f64;
        for (i, row) in x.row_iter().enumerate() {
            let dst = out.row_mut(i);
            for tree in &self.trees {
                let counts = tree.leaf_counts(row);
                let total: u32 = counts.iter().sum();
                for (d, &c) in dst.iter_mut().zip(counts) {
                    *d += c as f64 / total as f64 * scale;
                }
            }
        }
        Ok(out)
    }
}
