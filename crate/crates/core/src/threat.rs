//! Adversarial client behavior: attack windows, label flipping, MPAF and
//! missing-class synthetic-sample poisoning.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::models::{Model, Node, ParamVector, Tree, TreeEnsemble};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    #[default]
    None,
    LabelFlip,
    Mpaf,
    GanRecon,
}

impl AttackKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::LabelFlip => "label_flip",
            AttackKind::Mpaf => "mpaf",
            AttackKind::GanRecon => "gan_recon",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "none" => Ok(AttackKind::None),
            "label_flip" => Ok(AttackKind::LabelFlip),
            "mpaf" => Ok(AttackKind::Mpaf),
            "gan_recon" | "gan" => Ok(AttackKind::GanRecon),
            _ => Err(Error::Config(format!(
                "unknown attack '{s}' (expected none, label_flip, mpaf or gan_recon)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Window {
    #[default]
    Full,
    Mid,
    End,
}

impl Window {
    pub const ALL: [Window; 3] = [Window::Full, Window::Mid, Window::End];

    pub fn as_str(&self) -> &'static str {
        match self {
            Window::Full => "FULL",
            Window::Mid => "MID",
            Window::End => "END",
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FULL" => Ok(Window::Full),
            "MID" => Ok(Window::Mid),
            "END" => Ok(Window::End),
            _ => Err(Error::Config(format!(
                "unknown window '{s}' (expected FULL, MID or END)"
            ))),
        }
    }
}

/// How synthetic samples are produced for tree models, which have no input gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeGenerator {
    /// Follows each class tree to its highest leaf and sets the pixels on that path.
    #[default]
    PathGuided,
    /// One seeded noise image per class, jittered per sample.
    NoisePrototypes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackPlan {
    pub kind: AttackKind,
    pub window: Window,
    pub malicious_ratio: f64,
    pub flip_fraction: f64,
    pub lambda: f64,
    pub synth_per_class: usize,
    pub inversion_steps: usize,
    pub inversion_step_size: f64,
    pub tree_generator: TreeGenerator,
    /// Sample count an MPAF client reports to the server; `None` reports its true shard size.
    pub mpaf_report_nk: Option<usize>,
}

impl Default for AttackPlan {
    fn default() -> Self {
        Self {
            kind: AttackKind::None,
            window: Window::Full,
            malicious_ratio: 0.25,
            flip_fraction: 1.0,
            lambda: 10.0,
            synth_per_class: 100,
            inversion_steps: 30,
            inversion_step_size: 0.1,
            tree_generator: TreeGenerator::PathGuided,
            mpaf_report_nk: None,
        }
    }
}

impl AttackPlan {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.malicious_ratio) {
            return Err(Error::Config(format!(
                "malicious_ratio must lie in [0, 1], got {}",
                self.malicious_ratio
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_fraction) {
            return Err(Error::Config(format!(
                "flip_fraction must lie in [0, 1], got {}",
                self.flip_fraction
            )));
        }
        if self.kind == AttackKind::Mpaf && !(self.lambda > 1.0) {
            return Err(Error::Config(format!("mpaf needs lambda > 1, got {}", self.lambda)));
        }
        if !(self.inversion_step_size >= 0.0) {
            return Err(Error::Config("inversion_step_size must be non-negative".into()));
        }
        if self.mpaf_report_nk == Some(0) {
            return Err(Error::Config("mpaf_report_nk must be at least 1".into()));
        }
        Ok(())
    }
}

/// Rounds (1-based) in which adversaries act.
pub fn compute_attack_rounds(window: Window, rounds: usize) -> BTreeSet<usize> {
    if rounds == 0 {
        return BTreeSet::new();
    }
    let len = (3 * rounds).div_ceil(10);
    let start = match window {
        Window::Full => return (1..=rounds).collect(),
        // the window whose midpoint is nearest (R+1)/2, earlier on a tie
        Window::Mid => (rounds + 2 - len) / 2,
        Window::End => rounds + 1 - len,
    };
    (start..start + len).collect()
}

/// `round(k * c)` distinct client ids.
pub fn mark_adversaries(clients: usize, ratio: f64, seed: u64) -> BTreeSet<usize> {
    let count = ((ratio.clamp(0.0, 1.0) * clients as f64).round() as usize).min(clients);
    index::sample(&mut rng::stream(seed, "adversaries", &[]), clients, count)
        .into_iter()
        .collect()
}

/// Replaces `round(fraction * len)` seed-chosen labels `y` with `(y + 1) mod N`.
pub fn flip_labels(labels: &[usize], fraction: f64, classes: usize, seed: u64) -> Vec<usize> {
    let count = ((fraction.clamp(0.0, 1.0) * labels.len() as f64).round() as usize).min(labels.len());
    let mut out = labels.to_vec();
    for i in index::sample(&mut rng::stream(seed, "label-flip", &[]), labels.len(), count) {
        out[i] = (out[i] + 1) % classes;
    }
    out
}

/// `w_global + λ (w_base − w_global)`.
pub fn mpaf_update(w_global: &ParamVector, w_base: &ParamVector, lambda: f64) -> Result<ParamVector> {
    w_global.check_layout(w_base)?;
    let values = w_global
        .values
        .iter()
        .zip(&w_base.values)
        .map(|(g, b)| g + lambda * (b - g))
        .collect();
    ParamVector::new(values, w_global.layout.clone())
}

/// Produces labeled samples of classes a client has never seen.
pub trait SampleGenerator: Send + Sync {
    /// Samples carry their intended class as the label.
    fn generate(
        &self,
        model: &Model,
        missing: &BTreeSet<usize>,
        count_per_label: usize,
        seed: u64,
    ) -> Result<LabeledDataset>;
}

/// Gradient ascent on the global model's class score, from seeded noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelInversion {
    pub steps: usize,
    pub step_size: f64,
    /// Normalized pixel range `[lo, hi]`.
    pub lo: f64,
    pub hi: f64,
    pub tree_generator: TreeGenerator,
}

fn noise(rng: &mut impl Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(lo..=hi)).collect()
}

impl ModelInversion {
    fn invert_network(&self, model: &Model, class: usize, count: usize, seed: u64) -> Vec<f64> {
        let dim = model.input_dim();
        let mut x = noise(
            &mut rng::stream(seed, "inversion", &[class as u64]),
            count * dim,
            self.lo,
            self.hi,
        );
        let net = model.network().expect("differentiable model");
        for _ in 0..self.steps {
            let g = net.input_grad_of_score(&x, count, class);
            for (v, d) in x.iter_mut().zip(&g) {
                *v = (*v + self.step_size * d).clamp(self.lo, self.hi);
            }
        }
        x
    }

    fn noise_prototypes(&self, dim: usize, class: usize, count: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng::stream(seed, "prototype", &[class as u64]);
        let proto = noise(&mut rng, dim, self.lo, self.hi);
        let jitter = 0.1 * (self.hi - self.lo);
        let mut out = Vec::with_capacity(count * dim);
        for _ in 0..count {
            out.extend(
                proto
                    .iter()
                    .map(|p| (p + rng.gen_range(-jitter..=jitter)).clamp(self.lo, self.hi)),
            );
        }
        out
    }

    fn path_guided(&self, ensemble: &TreeEnsemble, dim: usize, class: usize, count: usize, seed: u64) -> Vec<f64> {
        let paths: Vec<(f64, Vec<(usize, bool)>)> = ensemble
            .trees
            .iter()
            .filter(|t| t.class == class)
            .map(best_leaf_path)
            .filter(|(v, _)| *v > 0.0)
            .collect();
        let mut rng = rng::stream(seed, "tree-inversion", &[class as u64]);
        let mut out = Vec::with_capacity(count * dim);
        for _ in 0..count {
            let mut vote = vec![0.0; dim];
            for (value, path) in &paths {
                if rng.gen_bool(0.5) {
                    for &(f, high) in path {
                        vote[f] += if high { *value } else { -*value };
                    }
                }
            }
            out.extend(vote.iter().map(|&v| if v > 0.0 { self.hi } else { self.lo }));
        }
        out
    }
}

/// Highest leaf of `tree` and the `(feature, x >= threshold)` tests leading to it.
fn best_leaf_path(tree: &Tree) -> (f64, Vec<(usize, bool)>) {
    fn walk(nodes: &[Node], at: usize, path: &mut Vec<(usize, bool)>, best: &mut (f64, Vec<(usize, bool)>)) {
        match nodes[at] {
            Node::Leaf { value } => {
                if value > best.0 {
                    *best = (value, path.clone());
                }
            }
            Node::Split {
                feature, left, right, ..
            } => {
                path.push((feature as usize, false));
                walk(nodes, left as usize, path, best);
                path.last_mut().expect("pushed above").1 = true;
                walk(nodes, right as usize, path, best);
                path.pop();
            }
        }
    }
    let mut best = (f64::NEG_INFINITY, Vec::new());
    walk(&tree.nodes, 0, &mut Vec::new(), &mut best);
    best
}

impl SampleGenerator for ModelInversion {
    fn generate(
        &self,
        model: &Model,
        missing: &BTreeSet<usize>,
        count_per_label: usize,
        seed: u64,
    ) -> Result<LabeledDataset> {
        let dim = model.input_dim();
        let classes = model.num_classes();
        if let Some(bad) = missing.iter().find(|&&c| c >= classes) {
            return Err(Error::Config(format!("missing label {bad} is not below {classes}")));
        }
        let mut features = Vec::with_capacity(missing.len() * count_per_label * dim);
        let mut labels = Vec::with_capacity(missing.len() * count_per_label);
        for &class in missing {
            let block = if count_per_label == 0 {
                Vec::new()
            } else if let Some(trees) = model.ensemble() {
                match self.tree_generator {
                    TreeGenerator::PathGuided => self.path_guided(trees, dim, class, count_per_label, seed),
                    TreeGenerator::NoisePrototypes => self.noise_prototypes(dim, class, count_per_label, seed),
                }
            } else {
                self.invert_network(model, class, count_per_label, seed)
            };
            features.extend(block);
            labels.extend(std::iter::repeat_n(class, count_per_label));
        }
        LabeledDataset::new(features, dim, labels, classes)
    }
}

/// Synthesizes `count_per_label` samples for every class in `missing`.
pub fn synthesize_missing(
    model: &Model,
    missing: &BTreeSet<usize>,
    count_per_label: usize,
    steps: usize,
    step_size: f64,
    pixel_range: (f64, f64),
    seed: u64,
) -> Result<LabeledDataset> {
    ModelInversion {
        steps,
        step_size,
        lo: pixel_range.0,
        hi: pixel_range.1,
        tree_generator: TreeGenerator::default(),
    }
    .generate(model, missing, count_per_label, seed)
}

/// Relabels every synthetic sample with a seed-chosen present label and
/// appends them to the local data.
pub fn mislabel_and_inject(
    local: &LabeledDataset,
    synth: &LabeledDataset,
    present_labels: &BTreeSet<usize>,
    seed: u64,
) -> Result<LabeledDataset> {
    if present_labels.is_empty() {
        return Err(Error::Config("mislabeling needs at least one present label".into()));
    }
    let mut rng = rng::stream(seed, "mislabel", &[]);
    let mut relabeled = synth.clone();
    for y in relabeled.labels.iter_mut() {
        let choices: Vec<usize> = present_labels.iter().copied().filter(|c| c != y).collect();
        if choices.is_empty() {
            return Err(Error::Config(format!(
                "no present label differs from intended class {y}"
            )));
        }
        *y = choices[rng.gen_range(0..choices.len())];
    }
    let mut out = local.clone();
    out.extend(&relabeled)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, ArchConfig, ModelKind};

    #[test]
    fn window_examples() {
        assert_eq!(compute_attack_rounds(Window::Full, 10), (1..=10).collect());
        assert_eq!(compute_attack_rounds(Window::Mid, 10), BTreeSet::from([4, 5, 6]));
        assert_eq!(compute_attack_rounds(Window::End, 10), BTreeSet::from([8, 9, 10]));
        assert_eq!(compute_attack_rounds(Window::Mid, 1), BTreeSet::from([1]));
    }

    #[test]
    fn mark_counts() {
        assert_eq!(mark_adversaries(100, 0.25, 3).len(), 25);
        assert!(mark_adversaries(100, 0.0, 3).is_empty());
        assert_eq!(mark_adversaries(20, 0.25, 3), mark_adversaries(20, 0.25, 3));
        assert!(mark_adversaries(20, 0.25, 3).iter().all(|&i| i < 20));
    }

    #[test]
    fn flip_examples() {
        assert_eq!(flip_labels(&[9], 1.0, 10, 0), vec![0]);
        assert_eq!(flip_labels(&[3, 4, 5], 0.0, 10, 0), vec![3, 4, 5]);
        assert_eq!(flip_labels(&[0, 1, 2], 1.0, 3, 0), vec![1, 2, 0]);
    }

    #[test]
    fn mpaf_examples() {
        let layout = vec![crate::models::ParamSpec::new("w", &[1])];
        let g = ParamVector::new(vec![0.0], layout.clone()).unwrap();
        let b = ParamVector::new(vec![1.0], layout.clone()).unwrap();
        assert_eq!(mpaf_update(&g, &b, 10.0).unwrap().values, vec![10.0]);
        assert_eq!(mpaf_update(&g, &b, 1.0).unwrap().values, vec![1.0]);
        assert_eq!(mpaf_update(&b, &b, 10.0).unwrap().values, vec![1.0]);
        let wide = ParamVector::new(vec![0.0, 0.0], vec![crate::models::ParamSpec::new("w", &[2])]).unwrap();
        assert!(matches!(mpaf_update(&g, &wide, 10.0), Err(Error::Shape(_))));
    }

    #[test]
    fn plan_validation() {
        let bad = AttackPlan {
            kind: AttackKind::Mpaf,
            lambda: 1.0,
            ..AttackPlan::default()
        };
        assert!(bad.validate().is_err());
        assert!(AttackPlan::default().validate().is_ok());
    }

    fn small_arch() -> ArchConfig {
        ArchConfig {
            image_side: 3,
            num_classes: 4,
            mlp_hidden: vec![5],
            ..ArchConfig::default()
        }
    }

    #[test]
    fn zero_steps_returns_seeded_noise() {
        let model = build_model(ModelKind::Mlp, &small_arch(), 1).unwrap();
        let missing = BTreeSet::from([2]);
        let a = synthesize_missing(&model, &missing, 3, 0, 0.1, (-1.0, 2.0), 9).unwrap();
        let expected = noise(&mut rng::stream(9, "inversion", &[2]), 27, -1.0, 2.0);
        assert_eq!(a.features, expected);
        assert_eq!(a.labels, vec![2, 2, 2]);
    }

    #[test]
    fn inversion_raises_target_logit() {
        let model = build_model(ModelKind::Mlp, &small_arch(), 4).unwrap();
        let missing = BTreeSet::from([1]);
        let before = synthesize_missing(&model, &missing, 8, 0, 0.05, (-1.0, 2.0), 5).unwrap();
        let after = synthesize_missing(&model, &missing, 8, 20, 0.05, (-1.0, 2.0), 5).unwrap();
        let mean_logit = |d: &LabeledDataset| model.scores(&d.features).chunks(4).map(|r| r[1]).sum::<f64>() / 8.0;
        assert!(mean_logit(&after) > mean_logit(&before));
        assert!(after.features.iter().all(|v| (-1.0..=2.0).contains(v)));
    }

    #[test]
    fn all_labels_missing_gives_n_times_count() {
        let model = build_model(ModelKind::Mlr, &small_arch(), 1).unwrap();
        let missing: BTreeSet<usize> = (0..4).collect();
        assert_eq!(
            synthesize_missing(&model, &missing, 5, 2, 0.1, (0.0, 1.0), 1)
                .unwrap()
                .len(),
            20
        );
    }

    #[test]
    fn tree_fallback_produces_samples() {
        let model = build_model(ModelKind::Tree, &small_arch(), 1).unwrap();
        let missing = BTreeSet::from([0, 3]);
        let d = synthesize_missing(&model, &missing, 4, 10, 0.1, (0.0, 1.0), 1).unwrap();
        assert_eq!(d.len(), 8);
    }

    #[test]
    fn path_guided_follows_the_best_leaf() {
        // x[1] >= 0.5 leads to the high leaf for class 0.
        let tree = Tree {
            class: 0,
            nodes: vec![
                Node::Split {
                    feature: 1,
                    threshold: 0.5,
                    left: 1,
                    right: 2,
                },
                Node::Leaf { value: -1.0 },
                Node::Leaf { value: 2.0 },
            ],
        };
        assert_eq!(best_leaf_path(&tree), (2.0, vec![(1, true)]));
        let mut ens = TreeEnsemble::new(2);
        ens.trees = vec![tree; 8];
        let gen = ModelInversion {
            steps: 0,
            step_size: 0.0,
            lo: 0.0,
            hi: 1.0,
            tree_generator: TreeGenerator::PathGuided,
        };
        let x = gen.path_guided(&ens, 3, 0, 2, 1);
        assert_eq!(x, vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn mislabel_examples() {
        let local = LabeledDataset::new(vec![0.0, 1.0], 1, vec![3, 3], 10).unwrap();
        let synth = LabeledDataset::new(vec![0.5], 1, vec![7], 10).unwrap();
        let out = mislabel_and_inject(&local, &synth, &BTreeSet::from([3]), 0).unwrap();
        assert_eq!(out.labels, vec![3, 3, 3]);
        assert_eq!(out.len(), 3);
        let empty = LabeledDataset::empty(1, 10);
        assert_eq!(
            mislabel_and_inject(&local, &empty, &BTreeSet::from([3]), 0).unwrap(),
            local
        );
    }
}
