//! Softmax gradient-boosted regression trees with histogram split finding.
//!
//! Each boosting round grows one tree per class against the current softmax
//! gradients/hessians. Trees store real-valued thresholds, so an ensemble
//! grown on one client's bins can score any other client's rows.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::models::loss::softmax_in_place;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Class whose margin this tree contributes to.
    pub class: usize,
    /// `nodes[0]` is the root.
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[feature as usize] < threshold { left } else { right } as usize;
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left as usize).max(walk(nodes, right as usize)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Single-leaf tree.
    pub fn constant(class: usize, value: f64) -> Self {
        Self {
            class,
            nodes: vec![Node::Leaf { value }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub trees: Vec<Tree>,
    pub num_classes: usize,
    pub base_score: f64,
}

impl TreeEnsemble {
    pub fn new(num_classes: usize) -> Self {
        Self {
            trees: Vec::new(),
            num_classes,
            base_score: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    /// Trees appended after the first `from`.
    pub fn tail(&self, from: usize) -> TreeEnsemble {
        TreeEnsemble {
            trees: self.trees[from.min(self.trees.len())..].to_vec(),
            num_classes: self.num_classes,
            base_score: self.base_score,
        }
    }

    /// Per-class summed leaf scores, row-major `rows x num_classes`.
    pub fn margins(&self, features: &[f64], dim: usize) -> Vec<f64> {
        let rows = features.len() / dim;
        let mut out = vec![self.base_score; rows * self.num_classes];
        self.add_margins(&self.trees, features, dim, &mut out);
        out
    }

    pub(crate) fn add_margins(&self, trees: &[Tree], features: &[f64], dim: usize, out: &mut [f64]) {
        for (row, m) in features.chunks_exact(dim).zip(out.chunks_exact_mut(self.num_classes)) {
            for t in trees {
                m[t.class] += t.predict(row);
            }
        }
    }

    pub fn max_depth(&self) -> usize {
        self.trees.iter().map(Tree::depth).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeSpec {
    pub max_depth: usize,
    pub learning_rate: f64,
    /// Row fraction sampled per tree.
    pub subsample: f64,
    /// Feature fraction sampled per tree.
    pub colsample: f64,
    /// L1 penalty on leaf weights.
    pub alpha: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Boosting rounds run by one call to `train_tree_round`.
    pub boosting_rounds: usize,
    pub bins: usize,
    pub min_child_weight: f64,
}

impl Default for TreeSpec {
    fn default() -> Self {
        Self {
            max_depth: 6,
            learning_rate: 0.08,
            subsample: 0.8,
            colsample: 0.8,
            alpha: 8.0,
            lambda: 2.0,
            boosting_rounds: 6,
            bins: 32,
            min_child_weight: 1.0,
        }
    }
}

/// Quantile cut points per feature plus each row's bin index.
struct Binned {
    cuts: Vec<Vec<f64>>,
    /// Row-major `rows x dim`; bin `b` means `cuts[b-1] <= x < cuts[b]`.
    bins: Vec<u8>,
    dim: usize,
    /// Histogram cells per feature (max cut count + 1).
    stride: usize,
}

impl Binned {
    fn build(data: &LabeledDataset, max_bins: usize) -> Self {
        let (rows, dim) = (data.len(), data.dim);
        let max_bins = max_bins.clamp(2, 256);
        let mut cuts = Vec::with_capacity(dim);
        let mut column = Vec::with_capacity(rows);
        for f in 0..dim {
            column.clear();
            column.extend((0..rows).map(|r| data.features[r * dim + f]));
            column.sort_by(f64::total_cmp);
            let mut fc: Vec<f64> = Vec::new();
            for q in 1..max_bins {
                let r = q * rows / max_bins;
                if r == 0 || r >= rows {
                    continue;
                }
                let hi = column[r];
                // largest value strictly below `hi`
                let lo_pos = column[..r].partition_point(|v| *v < hi);
                if lo_pos == 0 {
                    continue;
                }
                let cut = 0.5 * (column[lo_pos - 1] + hi);
                if fc.last().is_none_or(|&last| cut > last) {
                    fc.push(cut);
                }
            }
            cuts.push(fc);
        }
        let mut bins = vec![0u8; rows * dim];
        for r in 0..rows {
            for f in 0..dim {
                let v = data.features[r * dim + f];
                bins[r * dim + f] = cuts[f].partition_point(|c| *c <= v) as u8;
            }
        }
        let stride = cuts.iter().map(Vec::len).max().unwrap_or(0) + 1;
        Self {
            cuts,
            bins,
            dim,
            stride,
        }
    }
}

#[derive(Clone, Copy, Default)]
struct GradPair {
    g: f64,
    h: f64,
}

fn soft_threshold(g: f64, alpha: f64) -> f64 {
    if g > alpha {
        g - alpha
    } else if g < -alpha {
        g + alpha
    } else {
        0.0
    }
}

fn node_score(g: f64, h: f64, spec: &TreeSpec) -> f64 {
    let t = soft_threshold(g, spec.alpha);
    t * t / (h + spec.lambda)
}

fn leaf_value(g: f64, h: f64, spec: &TreeSpec) -> f64 {
    -soft_threshold(g, spec.alpha) / (h + spec.lambda) * spec.learning_rate
}

struct Grower<'a> {
    binned: &'a Binned,
    spec: &'a TreeSpec,
    features: Vec<usize>,
    grads: &'a [GradPair],
}

struct Pending {
    node: usize,
    rows: Vec<usize>,
    hist: Vec<GradPair>,
    total: GradPair,
    depth: usize,
}

impl Grower<'_> {
    fn histogram(&self, rows: &[usize]) -> Vec<GradPair> {
        let dim = self.binned.dim;
        let stride = self.binned.stride;
        let mut hist = vec![GradPair::default(); dim * stride];
        for &r in rows {
            let gp = self.grads[r];
            let row_bins = &self.binned.bins[r * dim..(r + 1) * dim];
            for &f in &self.features {
                let cell = &mut hist[f * stride + row_bins[f] as usize];
                cell.g += gp.g;
                cell.h += gp.h;
            }
        }
        hist
    }

    /// Best `(gain, feature, cut index)` for a node.
    fn best_split(&self, hist: &[GradPair], total: GradPair) -> Option<(f64, usize, usize)> {
        let parent = node_score(total.g, total.h, self.spec);
        let mut best: Option<(f64, usize, usize)> = None;
        for &f in &self.features {
            let n_cuts = self.binned.cuts[f].len();
            let mut left = GradPair::default();
            for cut in 0..n_cuts {
                let cell = hist[f * self.binned.stride + cut];
                left.g += cell.g;
                left.h += cell.h;
                let right = GradPair {
                    g: total.g - left.g,
                    h: total.h - left.h,
                };
                if left.h < self.spec.min_child_weight || right.h < self.spec.min_child_weight {
                    continue;
                }
                let gain = node_score(left.g, left.h, self.spec) + node_score(right.g, right.h, self.spec) - parent;
                if gain > 1e-12 && best.is_none_or(|(b, _, _)| gain > b) {
                    best = Some((gain, f, cut));
                }
            }
        }
        best
    }

    fn grow(&self, class: usize, rows: Vec<usize>) -> Tree {
        let mut nodes = vec![Node::Leaf { value: 0.0 }];
        let total = rows.iter().fold(GradPair::default(), |acc, &r| GradPair {
            g: acc.g + self.grads[r].g,
            h: acc.h + self.grads[r].h,
        });
        let mut frontier = vec![Pending {
            node: 0,
            hist: self.histogram(&rows),
            rows,
            total,
            depth: 0,
        }];
        while let Some(p) = frontier.pop() {
            let split = if p.depth < self.spec.max_depth {
                self.best_split(&p.hist, p.total)
            } else {
                None
            };
            let Some((_, feature, cut)) = split else {
                nodes[p.node] = Node::Leaf {
                    value: leaf_value(p.total.g, p.total.h, self.spec),
                };
                continue;
            };
            let dim = self.binned.dim;
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = p
                .rows
                .iter()
                .partition(|&&r| (self.binned.bins[r * dim + feature] as usize) <= cut);
            let sum = |rs: &[usize]| {
                rs.iter().fold(GradPair::default(), |acc, &r| GradPair {
                    g: acc.g + self.grads[r].g,
                    h: acc.h + self.grads[r].h,
                })
            };
            let (left_total, right_total) = (sum(&left_rows), sum(&right_rows));
            // Build the smaller child's histogram, derive the other by subtraction.
            let (small_hist, left_is_small) = if left_rows.len() <= right_rows.len() {
                (self.histogram(&left_rows), true)
            } else {
                (self.histogram(&right_rows), false)
            };
            let mut big_hist = p.hist;
            for &f in &self.features {
                for b in 0..=self.binned.cuts[f].len() {
                    let i = f * self.binned.stride + b;
                    big_hist[i].g -= small_hist[i].g;
                    big_hist[i].h -= small_hist[i].h;
                }
            }
            let (left_hist, right_hist) = if left_is_small {
                (small_hist, big_hist)
            } else {
                (big_hist, small_hist)
            };
            let left = nodes.len();
            nodes.push(Node::Leaf { value: 0.0 });
            nodes.push(Node::Leaf { value: 0.0 });
            nodes[p.node] = Node::Split {
                feature: feature as u32,
                threshold: self.binned.cuts[feature][cut],
                left: left as u32,
                right: left as u32 + 1,
            };
            frontier.push(Pending {
                node: left + 1,
                rows: right_rows,
                hist: right_hist,
                total: right_total,
                depth: p.depth + 1,
            });
            frontier.push(Pending {
                node: left,
                rows: left_rows,
                hist: left_hist,
                total: left_total,
                depth: p.depth + 1,
            });
        }
        Tree { class, nodes }
    }
}

/// Runs `spec.boosting_rounds` softmax boosting rounds on top of `ensemble`
/// and returns the extended ensemble (`boosting_rounds * num_classes` new
/// trees, in round-major, class-minor order).
pub fn train_tree_round(
    ensemble: &TreeEnsemble,
    data: &LabeledDataset,
    spec: &TreeSpec,
    seed: u64,
) -> Result<TreeEnsemble> {
    if data.is_empty() {
        return Err(Error::Config("cannot grow trees on an empty dataset".into()));
    }
    if data.num_classes != ensemble.num_classes {
        return Err(Error::Shape(format!(
            "data has {} classes, ensemble {}",
            data.num_classes, ensemble.num_classes
        )));
    }
    if !(spec.subsample > 0.0 && spec.subsample <= 1.0 && spec.colsample > 0.0 && spec.colsample <= 1.0) {
        return Err(Error::Config("subsample and colsample must lie in (0, 1]".into()));
    }
    let classes = ensemble.num_classes;
    let rows = data.len();
    let binned = Binned::build(data, spec.bins);
    let usable: Vec<usize> = (0..data.dim).filter(|&f| !binned.cuts[f].is_empty()).collect();

    let mut out = ensemble.clone();
    let mut margins = ensemble.margins(&data.features, data.dim);
    let mut rng = rng::stream(seed, "trees", &[]);
    let mut probs = vec![0.0; classes];
    let mut grads = vec![GradPair::default(); rows];

    for _ in 0..spec.boosting_rounds {
        let round_start = out.trees.len();
        let snapshot = margins.clone();
        for class in 0..classes {
            for r in 0..rows {
                probs.copy_from_slice(&snapshot[r * classes..(r + 1) * classes]);
                softmax_in_place(&mut probs);
                let p = probs[class];
                let y = if data.labels[r] == class { 1.0 } else { 0.0 };
                grads[r] = GradPair {
                    g: p - y,
                    h: (2.0 * p * (1.0 - p)).max(1e-16),
                };
            }
            let n_rows = ((rows as f64 * spec.subsample).round() as usize).clamp(1, rows);
            let mut sampled = index::sample(&mut rng, rows, n_rows).into_vec();
            sampled.sort_unstable();
            let n_feats = ((usable.len() as f64 * spec.colsample).round() as usize).min(usable.len());
            let mut features: Vec<usize> = if usable.is_empty() {
                Vec::new()
            } else {
                index::sample(&mut rng, usable.len(), n_feats.max(1))
                    .into_iter()
                    .map(|i| usable[i])
                    .collect()
            };
            features.sort_unstable();
            let grower = Grower {
                binned: &binned,
                spec,
                features,
                grads: &grads,
            };
            out.trees.push(grower.grow(class, sampled));
        }
        let new_trees = out.trees[round_start..].to_vec();
        out.add_margins(&new_trees, &data.features, data.dim, &mut margins);
    }
    Ok(out)
}
