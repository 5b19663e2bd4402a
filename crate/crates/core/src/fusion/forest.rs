//! Bagged regression trees (variance-reduction splits) with out-of-bag error.

use crate::par::{self, Execution};
use crate::seed;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_split: usize,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 100, max_depth: 6, min_split: 2, seed: 0, exec: Execution::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: Box<Node>, right: Box<Node> },
}

impl Node {
    fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Node::Leaf(v) => *v,
            Node::Split { feature, threshold, left, right } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }
}

fn mean(idx: &[usize], y: &[f64]) -> f64 {
    idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64
}

/// Best split of `idx` minimizing the summed squared error of both sides.
fn best_split(idx: &[usize], x: &[Vec<f64>], y: &[f64]) -> Option<(usize, f64)> {
    let n = idx.len() as f64;
    let total: f64 = idx.iter().map(|&i| y[i]).sum();
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..x[idx[0]].len() {
        let mut order = idx.to_vec();
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
        let mut left_sum = 0.0;
        for k in 0..order.len() - 1 {
            left_sum += y[order[k]];
            let (a, b) = (x[order[k]][f], x[order[k + 1]][f]);
            if a == b {
                continue;
            }
            let nl = (k + 1) as f64;
            let nr = n - nl;
            let right_sum = total - left_sum;
            // Maximizing this is equivalent to minimizing the split SSE.
            let gain = left_sum * left_sum / nl + right_sum * right_sum / nr;
            if best.is_none_or(|(g, _, _)| gain > g) {
                best = Some((gain, f, 0.5 * (a + b)));
            }
        }
    }
    let (gain, f, t) = best?;
    (gain > total * total / n + 1e-12 * total.abs().max(1.0)).then_some((f, t))
}

fn grow(idx: &[usize], x: &[Vec<f64>], y: &[f64], depth: usize, cfg: &ForestConfig) -> Node {
    if depth >= cfg.max_depth || idx.len() < cfg.min_split {
        return Node::Leaf(mean(idx, y));
    }
    match best_split(idx, x, y) {
        None => Node::Leaf(mean(idx, y)),
        Some((feature, threshold)) => {
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][feature] <= threshold);
            Node::Split {
                feature,
                threshold,
                left: Box::new(grow(&l, x, y, depth + 1, cfg)),
                right: Box::new(grow(&r, x, y, depth + 1, cfg)),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    trees: Vec<Node>,
    /// Out-of-bag prediction per training row (`None` if never out of bag).
    pub oob_predictions: Vec<Option<f64>>,
    pub oob_rmse: f64,
}

impl RandomForest {
    pub fn fit(x: &[Vec<f64>], y: &[f64], cfg: &ForestConfig) -> Self {
        let n = y.len();
        let grown: Vec<(Node, Vec<bool>)> = par::map_range(cfg.exec, cfg.n_trees, |t| {
            let mut rng = seed::stream_rng(cfg.seed, t as u64);
            let mut in_bag = vec![false; n];
            let sample: Vec<usize> = (0..n)
                .map(|_| {
                    let i = rng.random_range(0..n);
                    in_bag[i] = true;
                    i
                })
                .collect();
            (grow(&sample, x, y, 0, cfg), in_bag)
        });
        let mut sums = vec![0.0; n];
        let mut counts = vec![0usize; n];
        for (tree, in_bag) in &grown {
            for i in (0..n).filter(|&i| !in_bag[i]) {
                sums[i] += tree.predict(&x[i]);
                counts[i] += 1;
            }
        }
        let oob_predictions: Vec<Option<f64>> =
            sums.iter().zip(&counts).map(|(s, &c)| (c > 0).then(|| s / c as f64)).collect();
        let (sse, m) = oob_predictions
            .iter()
            .zip(y)
            .filter_map(|(p, t)| p.map(|p| (p - t).powi(2)))
            .fold((0.0, 0usize), |(s, m), e| (s + e, m + 1));
        let oob_rmse = if m > 0 { (sse / m as f64).sqrt() } else { f64::NAN };
        RandomForest { trees: grown.into_iter().map(|(t, _)| t).collect(), oob_predictions, oob_rmse }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_split_recovers_step() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 0.0]).collect();
        let y: Vec<f64> = (0..20).map(|i| if i < 10 { 1.0 } else { 5.0 }).collect();
        let idx: Vec<usize> = (0..20).collect();
        let (f, t) = best_split(&idx, &x, &y).unwrap();
        assert_eq!((f, t), (0, 9.5));
    }

    #[test]
    fn constant_target() {
        let x: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 * 0.1, (i as f64).sin()]).collect();
        let y = vec![0.7; 50];
        let f = RandomForest::fit(&x, &y, &ForestConfig { n_trees: 20, ..Default::default() });
        assert!((f.predict(&[1.0, 0.3]) - 0.7).abs() < 1e-12);
        assert!(f.oob_rmse < 1e-12);
    }

    #[test]
    fn deterministic_and_strategy_independent() {
        let x: Vec<Vec<f64>> = (0..80).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()]).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0].max(r[1])).collect();
        let cfg = ForestConfig { n_trees: 30, seed: 5, ..Default::default() };
        let a = RandomForest::fit(&x, &y, &cfg);
        let b = RandomForest::fit(&x, &y, &ForestConfig { exec: Execution::Sequential, ..cfg });
        assert_eq!(a, b);
    }
}
