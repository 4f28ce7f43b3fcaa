//! CART decision tree: Gini splits for classes, squared error for values.

use serde::{Deserialize, Serialize};

use super::features::Labels;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub classification: bool,
}

struct Split {
    feature: usize,
    threshold: f64,
    score: f64,
}

struct Builder<'a> {
    x: &'a Matrix,
    classes: Option<(&'a [usize], usize)>,
    values: &'a [f64],
    max_depth: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn y(&self, i: usize) -> f64 {
        match self.classes {
            Some((c, _)) => c[i] as f64,
            None => self.values[i],
        }
    }

    fn leaf_value(&self, idx: &[usize]) -> f64 {
        match self.classes {
            Some((c, k)) => {
                let mut counts = vec![0usize; k];
                for &i in idx {
                    counts[c[i]] += 1;
                }
                // ties go to the lowest class index
                let mut best = 0;
                for j in 1..k {
                    if counts[j] > counts[best] {
                        best = j;
                    }
                }
                best as f64
            }
            None => idx.iter().map(|&i| self.values[i]).sum::<f64>() / idx.len() as f64,
        }
    }

    fn is_pure(&self, idx: &[usize]) -> bool {
        let first = self.y(idx[0]);
        idx.iter().all(|&i| self.y(i) == first)
    }

    fn best_split(&self, idx: &[usize]) -> Option<Split> {
        let n = idx.len();
        let mut best: Option<Split> = None;
        let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
        let k = self.classes.map_or(0, |(_, k)| k);
        let mut left = vec![0f64; k];
        let mut right = vec![0f64; k];
        for f in 0..self.x.cols() {
            order.clear();
            order.extend(idx.iter().map(|&i| (self.x.get(i, f), i)));
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            if order[0].0 == order[n - 1].0 {
                continue;
            }
            // Split score to maximize: Σ_k c_k²/n per side for classes
            // (weighted Gini is n minus it), s²/n per side for values.
            let (mut sq_l, mut sq_r, mut s_l, mut s_r) = (0.0, 0.0, 0.0, 0.0);
            if let Some((c, _)) = self.classes {
                left.iter_mut().for_each(|v| *v = 0.0);
                right.iter_mut().for_each(|v| *v = 0.0);
                for &(_, i) in &order {
                    right[c[i]] += 1.0;
                }
                sq_r = right.iter().map(|v| v * v).sum();
            } else {
                s_r = order.iter().map(|&(_, i)| self.values[i]).sum();
            }
            for pos in 0..n - 1 {
                let i = order[pos].1;
                if let Some((c, _)) = self.classes {
                    let cls = c[i];
                    sq_l += 2.0 * left[cls] + 1.0;
                    sq_r -= 2.0 * right[cls] - 1.0;
                    left[cls] += 1.0;
                    right[cls] -= 1.0;
                } else {
                    let y = self.y(i);
                    s_l += y;
                    s_r -= y;
                }
                if order[pos].0 == order[pos + 1].0 {
                    continue;
                }
                let nl = (pos + 1) as f64;
                let nr = (n - pos - 1) as f64;
                let score = if self.classes.is_some() {
                    sq_l / nl + sq_r / nr
                } else {
                    s_l * s_l / nl + s_r * s_r / nr
                };
                // zero-gain splits are allowed (XOR needs one), so only ties lose
                if best.as_ref().is_none_or(|b| score > b.score) {
                    best = Some(Split {
                        feature: f,
                        threshold: 0.5 * (order[pos].0 + order[pos + 1].0),
                        score,
                    });
                }
            }
        }
        best
    }

    fn build(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(self.leaf_value(idx)));
        if depth >= self.max_depth || idx.len() < 2 || self.is_pure(idx) {
            return id;
        }
        let Some(split) = self.best_split(idx) else {
            return id;
        };
        let (f, t) = (split.feature, split.threshold);
        let mut mid = 0;
        for p in 0..idx.len() {
            if self.x.get(idx[p], f) <= t {
                idx.swap(p, mid);
                mid += 1;
            }
        }
        let (l, r) = idx.split_at_mut(mid);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature: f,
            threshold: t,
            left,
            right,
        };
        id
    }
}

impl DecisionTree {
    pub fn fit(x: &Matrix, y: &Labels, max_depth: usize) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::Shape(format!("{} rows for {} labels", x.rows(), y.len())));
        }
        if x.rows() == 0 {
            return Err(Error::InvalidArgument("cannot fit a tree on zero rows".into()));
        }
        let (classes, values): (Option<(&[usize], usize)>, &[f64]) = match y {
            Labels::Classes { labels, names } => {
                let k = names.len().max(labels.iter().max().map_or(0, |m| m + 1));
                (Some((labels.as_slice(), k)), &[])
            }
            Labels::Values(v) => (None, v.as_slice()),
        };
        let mut b = Builder {
            x,
            classes,
            values,
            max_depth,
            nodes: Vec::new(),
        };
        let mut idx: Vec<usize> = (0..x.rows()).collect();
        b.build(&mut idx, 0);
        Ok(DecisionTree {
            nodes: b.nodes,
            classification: classes.is_some(),
        })
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut id = 0;
        loop {
            match self.nodes[id] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        (0..x.rows()).map(|r| self.predict_row(x.row(r))).collect()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], id: usize) -> usize {
            match nodes[id] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Root split as (feature, threshold), if any.
    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes.first()? {
            Node::Split {
                feature, threshold, ..
            } => Some((*feature, *threshold)),
            Node::Leaf(_) => None,
        }
    }
}
