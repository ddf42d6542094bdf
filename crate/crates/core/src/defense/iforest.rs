//! Isolation forest: random axis splits, anomaly score `2^(−E[h(x)] / c(ψ))`.

use rand::seq::index;
use rand::Rng;

use crate::rng;

#[derive(Debug, Clone, PartialEq)]
enum INode {
    Split {
        feature: usize,
        value: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        size: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct IsolationForest {
    trees: Vec<Vec<INode>>,
    psi: usize,
}

/// Average unsuccessful-search path length in a BST of `n` points.
fn c_factor(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * ((n - 1.0).ln() + 0.577_215_664_901_532_9) - 2.0 * (n - 1.0) / n
        }
    }
}

fn grow(
    rows: &[Vec<f64>],
    idx: Vec<usize>,
    depth: usize,
    limit: usize,
    rng: &mut impl Rng,
    nodes: &mut Vec<INode>,
) -> usize {
    let at = nodes.len();
    nodes.push(INode::Leaf { size: idx.len() });
    if depth >= limit || idx.len() <= 1 {
        return at;
    }
    let dims = rows[0].len();
    let spread: Vec<(usize, f64, f64)> = (0..dims)
        .filter_map(|f| {
            let lo = idx.iter().map(|&i| rows[i][f]).fold(f64::INFINITY, f64::min);
            let hi = idx.iter().map(|&i| rows[i][f]).fold(f64::NEG_INFINITY, f64::max);
            (hi > lo).then_some((f, lo, hi))
        })
        .collect();
    if spread.is_empty() {
        return at;
    }
    let (feature, lo, hi) = spread[rng.gen_range(0..spread.len())];
    let value = rng.gen_range(lo..hi);
    let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| rows[i][feature] < value);
    let left = grow(rows, l, depth + 1, limit, rng, nodes);
    let right = grow(rows, r, depth + 1, limit, rng, nodes);
    nodes[at] = INode::Split {
        feature,
        value,
        left,
        right,
    };
    at
}

fn path_length(nodes: &[INode], x: &[f64]) -> f64 {
    let mut at = 0;
    let mut depth = 0.0;
    loop {
        match &nodes[at] {
            INode::Leaf { size } => return depth + c_factor(*size),
            INode::Split {
                feature,
                value,
                left,
                right,
            } => {
                at = if x[*feature] < *value { *left } else { *right };
                depth += 1.0;
            }
        }
    }
}

impl IsolationForest {
    pub(crate) fn fit(rows: &[Vec<f64>], trees: usize, max_samples: usize, seed: u64) -> Self {
        let psi = max_samples.min(rows.len());
        let limit = (psi as f64).log2().ceil() as usize;
        let mut rng = rng::stream(seed, "iforest", &[]);
        let trees = (0..trees)
            .map(|_| {
                let sample = index::sample(&mut rng, rows.len(), psi).into_vec();
                let mut nodes = Vec::new();
                grow(rows, sample, 0, limit, &mut rng, &mut nodes);
                nodes
            })
            .collect();
        Self { trees, psi }
    }

    pub(crate) fn score(&self, x: &[f64]) -> f64 {
        let mean = self.trees.iter().map(|t| path_length(t, x)).sum::<f64>() / self.trees.len() as f64;
        2f64.powf(-mean / c_factor(self.psi).max(f64::MIN_POSITIVE))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_factor_small_values() {
        assert_eq!(c_factor(1), 0.0);
        assert_eq!(c_factor(2), 1.0);
        // 2 (ln 2 + γ) − 4/3
        assert!((c_factor(3) - (2.0 * (2f64.ln() + 0.5772156649015329) - 4.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn isolated_point_scores_higher() {
        let mut rows: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![(i % 7) as f64 * 0.01, (i % 5) as f64 * 0.01])
            .collect();
        rows.push(vec![3.0, 3.0]);
        let f = IsolationForest::fit(&rows, 100, 64, 9);
        assert!(f.score(&[3.0, 3.0]) > f.score(&[0.02, 0.02]));
    }
}
