use hotspot_nn::init::{mix_seed, rng, SeededRng};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Classifier, Dataset};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig { max_depth: 12, min_leaf: 5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaxFeatures {
    Sqrt,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf { score: f64 },
    /// `x[feature] <= threshold` goes left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// CART classifier: greedy Gini splits at midpoints between sorted distinct
/// values; a leaf scores its hot fraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

fn gini(hot: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let q = hot as f64 / n as f64;
    2.0 * q * (1.0 - q)
}

struct Builder<'a> {
    data: &'a Dataset,
    config: &'a TreeConfig,
    /// Features tried per split; `None` tries all in index order.
    subsample: Option<(usize, SeededRng)>,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn build(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let n = idx.len();
        let hot = idx.iter().filter(|&&i| self.data.y[i]).count();
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { score: hot as f64 / n as f64 });
        if depth >= self.config.max_depth || hot == 0 || hot == n || n < 2 * self.config.min_leaf.max(1) {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(idx, hot) else {
            return id;
        };
        let mut split = 0;
        for k in 0..n {
            if self.data.row(idx[k])[feature] <= threshold {
                idx.swap(k, split);
                split += 1;
            }
        }
        let (l, r) = idx.split_at_mut(split);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }

    fn best_split(&mut self, idx: &[usize], hot: usize) -> Option<(usize, f64)> {
        let n = idx.len();
        let dim = self.data.dim;
        let features: Vec<usize> = match &mut self.subsample {
            Some((m, r)) if *m < dim => {
                let mut f = sample(r, dim, *m).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..dim).collect(),
        };
        let min_leaf = self.config.min_leaf.max(1);
        let parent = gini(hot, n);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut column: Vec<(f64, bool)> = Vec::with_capacity(n);
        for f in features {
            column.clear();
            column.extend(idx.iter().map(|&i| (self.data.row(i)[f], self.data.y[i])));
            column.sort_by(|a, b| a.0.total_cmp(&b.0));
            if column[0].0 == column[n - 1].0 {
                continue;
            }
            let mut left_hot = 0;
            for k in 1..n {
                left_hot += column[k - 1].1 as usize;
                if column[k - 1].0 == column[k].0 || k < min_leaf || n - k < min_leaf {
                    continue;
                }
                let weighted = (k as f64 * gini(left_hot, k) + (n - k) as f64 * gini(hot - left_hot, n - k)) / n as f64;
                let gain = parent - weighted;
                if gain > 1e-12 && best.is_none_or(|b| gain > b.0) {
                    best = Some((gain, f, 0.5 * (column[k - 1].0 + column[k].0)));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

impl DecisionTree {
    pub fn fit(data: &Dataset, config: &TreeConfig) -> Result<Self> {
        DecisionTree::grow(data, config, None)
    }

    fn grow(data: &Dataset, config: &TreeConfig, subsample: Option<(usize, SeededRng)>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::data("cannot fit a tree on an empty training set"));
        }
        let mut builder = Builder { data, config, subsample, nodes: Vec::new() };
        let mut idx: Vec<usize> = (0..data.len()).collect();
        builder.build(&mut idx, 0);
        Ok(DecisionTree { nodes: builder.nodes })
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

impl Classifier for DecisionTree {
    fn score(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { score } => return score,
                Node::Split { feature, threshold, left, right } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

/// Bagged trees; the score is the mean tree score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
}

impl RandomForest {
    pub fn fit(data: &Dataset, config: &TreeConfig, trees: usize, bootstrap: bool, max_features: MaxFeatures, seed: u64) -> Result<Self> {
        if trees == 0 {
            return Err(Error::config("a forest needs at least one tree"));
        }
        if data.is_empty() {
            return Err(Error::data("cannot fit a forest on an empty training set"));
        }
        let per_split = match max_features {
            MaxFeatures::Sqrt => ((data.dim as f64).sqrt().floor() as usize).max(1),
            MaxFeatures::All => data.dim,
        };
        let trees = (0..trees)
            .map(|t| {
                let mut r = rng(mix_seed(seed, t as u64));
                let bag;
                let view = if bootstrap {
                    let idx: Vec<usize> = (0..data.len()).map(|_| r.random_range(0..data.len())).collect();
                    bag = data.subset(&idx);
                    &bag
                } else {
                    data
                };
                DecisionTree::grow(view, config, Some((per_split, r)))
            })
            .collect::<Result<_>>()?;
        Ok(RandomForest { trees })
    }
}

impl Classifier for RandomForest {
    fn score(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.score(x)).sum::<f64>() / self.trees.len() as f64
    }
}
