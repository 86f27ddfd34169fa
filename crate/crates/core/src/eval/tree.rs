//! CART classification trees with Gini splits, and bagged forests of them.

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::features::Matrix;
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { probs: Vec<f64> },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeOptions {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features examined per split; all when `None`.
    pub max_features: Option<usize>,
}

impl Default for TreeOptions {
    fn default() -> Self {
        Self {
            max_depth: 6,
            min_leaf: 1,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
    pub classes: usize,
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [usize],
    classes: usize,
    opts: &'a TreeOptions,
    nodes: Vec<Node>,
}

/// Sum over both sides of Σ count² / n; larger is purer.
fn purity(counts: &[f64], n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    counts.iter().map(|c| c * c).sum::<f64>() / n
}

impl Builder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let mut probs = vec![0.0; self.classes];
        for &i in idx {
            probs[self.y[i]] += 1.0;
        }
        let n = idx.len().max(1) as f64;
        probs.iter_mut().for_each(|p| *p /= n);
        self.nodes.push(Node::Leaf { probs });
        self.nodes.len() - 1
    }

    fn best_split(&self, idx: &[usize], rng: &mut Rng) -> Option<(usize, f64)> {
        let d = self.x.cols;
        let features: Vec<usize> = match self.opts.max_features {
            Some(m) if m < d => {
                let mut f = sample(rng, d, m).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        };
        let mut total = vec![0.0; self.classes];
        for &i in idx {
            total[self.y[i]] += 1.0;
        }
        let n = idx.len() as f64;
        let parent = purity(&total, n);
        let min_leaf = self.opts.min_leaf.max(1);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order: Vec<(f64, usize)> = Vec::with_capacity(idx.len());
        let mut left = vec![0.0; self.classes];
        for &f in &features {
            order.clear();
            order.extend(idx.iter().map(|&i| (self.x.get(i, f), self.y[i])));
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            if order[0].0 == order[order.len() - 1].0 {
                continue;
            }
            left.iter_mut().for_each(|c| *c = 0.0);
            let mut right = total.clone();
            for k in 0..order.len() - 1 {
                let (v, c) = order[k];
                left[c] += 1.0;
                right[c] -= 1.0;
                let nl = k + 1;
                if v == order[k + 1].0 || nl < min_leaf || order.len() - nl < min_leaf {
                    continue;
                }
                let score = purity(&left, nl as f64) + purity(&right, (order.len() - nl) as f64);
                if score > parent + 1e-12 && best.is_none_or(|b| score > b.0 + 1e-12) {
                    best = Some((score, f, 0.5 * (v + order[k + 1].0)));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize, rng: &mut Rng) -> usize {
        let first = self.y[idx[0]];
        if depth >= self.opts.max_depth || idx.len() < 2 * self.opts.min_leaf.max(1) || idx.iter().all(|&i| self.y[i] == first) {
            return self.leaf(&idx);
        }
        let Some((feature, threshold)) = self.best_split(&idx, rng) else {
            return self.leaf(&idx);
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| self.x.get(i, feature) <= threshold);
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf { probs: Vec::new() });
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[slot] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        slot
    }
}

impl Tree {
    /// Fits on the rows `idx` of `x`. `idx` must be nonempty.
    pub fn fit_rows(x: &Matrix, y: &[usize], classes: usize, idx: Vec<usize>, opts: &TreeOptions, seed: u64) -> Tree {
        let mut b = Builder {
            x,
            y,
            classes,
            opts,
            nodes: Vec::new(),
        };
        let mut r = rng::rng(seed);
        b.grow(idx, 0, &mut r);
        Tree { nodes: b.nodes, classes }
    }

    pub fn fit(x: &Matrix, y: &[usize], classes: usize, opts: &TreeOptions, seed: u64) -> Tree {
        Self::fit_rows(x, y, classes, (0..x.rows).collect(), opts, seed)
    }

    pub fn proba(&self, row: &[f64]) -> &[f64] {
        let mut n = 0;
        loop {
            match &self.nodes[n] {
                Node::Leaf { probs } => return probs,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => n = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], n: usize) -> usize {
            match &nodes[n] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    /// Bootstrap-resampled trees, √d features per split unless set in `opts`.
    pub fn fit(x: &Matrix, y: &[usize], classes: usize, trees: usize, opts: &TreeOptions, seed: u64) -> Forest {
        let mut opts = opts.clone();
        if opts.max_features.is_none() {
            opts.max_features = Some(((x.cols as f64).sqrt().round() as usize).max(1));
        }
        let trees = (0..trees)
            .map(|t| {
                let s = rng::indexed(seed, t as u64);
                let mut r = rng::rng(s);
                let idx: Vec<usize> = (0..x.rows).map(|_| r.random_range(0..x.rows)).collect();
                Tree::fit_rows(x, y, classes, idx, &opts, rng::substream(s, "tree"))
            })
            .collect();
        Forest { trees }
    }

    pub fn proba(&self, row: &[f64]) -> Vec<f64> {
        let classes = self.trees.first().map_or(0, |t| t.classes);
        let mut out = vec![0.0; classes];
        for t in &self.trees {
            for (o, p) in out.iter_mut().zip(t.proba(row)) {
                *o += p;
            }
        }
        let n = self.trees.len().max(1) as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_feature_is_split_exactly() {
        let x = Matrix::new(6, 1, vec![0.1, 0.2, 0.3, 0.7, 0.8, 0.9]).unwrap();
        let y = [0, 0, 0, 1, 1, 1];
        let t = Tree::fit(&x, &y, 2, &TreeOptions::default(), 1);
        assert_eq!(t.depth(), 1);
        match &t.nodes[0] {
            Node::Split { threshold, .. } => assert!((threshold - 0.5).abs() < 1e-12),
            n => panic!("{n:?}"),
        }
        for i in 0..6 {
            assert_eq!(t.proba(x.row(i))[y[i]], 1.0);
        }
    }

    #[test]
    fn identical_rows_are_not_split() {
        let x = Matrix::new(4, 2, vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).unwrap();
        let t = Tree::fit(&x, &[0, 1, 0, 1], 2, &TreeOptions::default(), 1);
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.proba(x.row(0)), &[0.5, 0.5]);
    }

    #[test]
    fn depth_limit_is_respected() {
        let x = Matrix::new(8, 1, (0..8).map(f64::from).collect()).unwrap();
        let y = [0, 1, 0, 1, 0, 1, 0, 1];
        let opts = TreeOptions {
            max_depth: 2,
            ..TreeOptions::default()
        };
        assert!(Tree::fit(&x, &y, 2, &opts, 1).depth() <= 2);
    }
}
