//! Trainable classifiers behind one contract: export/import a
//! [`ParamVector`], train locally, evaluate.

mod linalg;
mod loss;
mod metrics;
mod network;
mod optim;
mod params;
mod train;
mod tree;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use loss::{softmax_in_place, LossKind};
pub use metrics::{ClassMetrics, EvalMetrics};
pub use network::{CnnArch, Network};
pub use optim::Optimizer;
pub use params::{ParamSpec, ParamVector};
pub use train::{batch_schedule, train_epochs, train_local, TrainSpec};
pub use tree::{train_tree_round, Node, Tree, TreeEnsemble, TreeSpec};

pub(crate) use metrics::argmax;

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlr,
    Svc,
    Mlp,
    Cnn,
    Tree,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Mlr,
        ModelKind::Svc,
        ModelKind::Mlp,
        ModelKind::Cnn,
        ModelKind::Tree,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Mlr => "mlr",
            ModelKind::Svc => "svc",
            ModelKind::Mlp => "mlp",
            ModelKind::Cnn => "cnn",
            ModelKind::Tree => "tree",
        }
    }

    pub fn is_differentiable(&self) -> bool {
        !matches!(self, ModelKind::Tree)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown model kind '{s}' (expected mlr, svc, mlp, cnn or tree)"
                ))
            })
    }
}

/// Architecture knobs shared by every model kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub image_side: usize,
    pub num_classes: usize,
    pub mlp_hidden: Vec<usize>,
    pub cnn_convs: Vec<(usize, usize)>,
    pub cnn_dense: Vec<usize>,
    /// Width of the quadratic zone of the SVC hinge; 0 trains the plain hinge.
    pub svc_smoothing: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        let lenet = CnnArch::lenet(28);
        Self {
            image_side: 28,
            num_classes: 10,
            mlp_hidden: vec![128, 64],
            cnn_convs: lenet.convs,
            cnn_dense: lenet.dense,
            svc_smoothing: 0.0,
        }
    }
}

impl ArchConfig {
    pub fn input_dim(&self) -> usize {
        self.image_side * self.image_side
    }

    fn cnn_arch(&self) -> Result<CnnArch> {
        let mut side = self.image_side;
        for &(channels, kernel) in &self.cnn_convs {
            if channels == 0 || kernel == 0 || kernel > side {
                return Err(Error::Config(format!(
                    "conv block {channels}@{kernel}x{kernel} does not fit a {side}x{side} input"
                )));
            }
            side = (side + 1 - kernel) / 2;
            if side == 0 {
                return Err(Error::Config("convolution stack pools the image away".into()));
            }
        }
        Ok(CnnArch {
            side: self.image_side,
            convs: self.cnn_convs.clone(),
            dense: self.cnn_dense.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Body {
    Net(Network),
    Trees(TreeEnsemble),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    kind: ModelKind,
    input_dim: usize,
    body: Body,
}

/// Builds a fresh model. Linear models start at zero; MLP/CNN weights are
/// drawn He-uniform from the `(seed, "init")` stream.
pub fn build_model(kind: ModelKind, arch: &ArchConfig, seed: u64) -> Result<Model> {
    if arch.image_side == 0 || arch.num_classes < 2 {
        return Err(Error::Config(
            "need a positive image side and at least two classes".into(),
        ));
    }
    let dim = arch.input_dim();
    let classes = arch.num_classes;
    let body = match kind {
        ModelKind::Mlr => Body::Net(Network::linear(dim, classes, LossKind::CrossEntropy)),
        ModelKind::Svc => Body::Net(Network::linear(
            dim,
            classes,
            LossKind::Hinge {
                smoothing: arch.svc_smoothing,
            },
        )),
        ModelKind::Mlp => {
            if arch.mlp_hidden.contains(&0) {
                return Err(Error::Config("MLP hidden widths must be positive".into()));
            }
            let mut net = Network::mlp(dim, &arch.mlp_hidden, classes);
            net.init_he_uniform(&mut rng::stream(seed, "init", &[]));
            Body::Net(net)
        }
        ModelKind::Cnn => {
            let mut net = Network::cnn(&arch.cnn_arch()?, classes);
            net.init_he_uniform(&mut rng::stream(seed, "init", &[]));
            Body::Net(net)
        }
        ModelKind::Tree => Body::Trees(TreeEnsemble::new(classes)),
    };
    Ok(Model {
        kind,
        input_dim: dim,
        body,
    })
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        match &self.body {
            Body::Net(n) => n.num_classes(),
            Body::Trees(t) => t.num_classes,
        }
    }

    pub fn network(&self) -> Option<&Network> {
        match &self.body {
            Body::Net(n) => Some(n),
            Body::Trees(_) => None,
        }
    }

    pub(crate) fn network_mut(&mut self) -> Option<&mut Network> {
        match &mut self.body {
            Body::Net(n) => Some(n),
            Body::Trees(_) => None,
        }
    }

    pub fn ensemble(&self) -> Option<&TreeEnsemble> {
        match &self.body {
            Body::Trees(t) => Some(t),
            Body::Net(_) => None,
        }
    }

    pub fn set_ensemble(&mut self, ensemble: TreeEnsemble) -> Result<()> {
        match &mut self.body {
            Body::Trees(t) if t.num_classes == ensemble.num_classes => {
                *t = ensemble;
                Ok(())
            }
            Body::Trees(t) => Err(Error::Shape(format!(
                "ensemble has {} classes, model {}",
                ensemble.num_classes, t.num_classes
            ))),
            Body::Net(_) => Err(Error::Config(format!("{} models do not hold trees", self.kind))),
        }
    }

    pub fn get_params(&self) -> Result<ParamVector> {
        let net = self
            .network()
            .ok_or_else(|| Error::Config("tree ensembles have no parameter vector".into()))?;
        ParamVector::new(net.params.clone(), net.layout.clone())
    }

    pub fn set_params(&mut self, p: &ParamVector) -> Result<()> {
        let kind = self.kind;
        let net = self
            .network_mut()
            .ok_or_else(|| Error::Config(format!("{kind} models have no parameter vector")))?;
        if p.layout != net.layout || p.values.len() != net.params.len() {
            return Err(Error::Shape(format!(
                "parameter vector of {} values does not match the {kind} layout ({} values)",
                p.values.len(),
                net.params.len()
            )));
        }
        net.params.copy_from_slice(&p.values);
        Ok(())
    }

    /// Parameters of a freshly randomized (untrained) copy of this model.
    pub fn random_params(&self, seed: u64, label: &str) -> Result<ParamVector> {
        let net = self
            .network()
            .ok_or_else(|| Error::Config("tree ensembles have no parameter vector".into()))?;
        let mut fresh = net.clone();
        fresh.init_he_uniform(&mut rng::stream(seed, label, &[]));
        ParamVector::new(fresh.params, fresh.layout)
    }

    /// Raw class scores (logits, margins or summed leaf values), row-major.
    pub fn scores(&self, features: &[f64]) -> Vec<f64> {
        const CHUNK: usize = 500;
        let dim = self.input_dim;
        let mut out = Vec::with_capacity(features.len() / dim * self.num_classes());
        for chunk in features.chunks(CHUNK * dim) {
            match &self.body {
                Body::Net(n) => out.extend(n.scores(chunk, chunk.len() / dim)),
                Body::Trees(t) => out.extend(t.margins(chunk, dim)),
            }
        }
        out
    }

    pub fn predict(&self, features: &[f64]) -> Vec<usize> {
        self.scores(features)
            .chunks_exact(self.num_classes())
            .map(argmax)
            .collect()
    }

    fn loss_kind(&self) -> LossKind {
        match &self.body {
            Body::Net(n) => n.loss,
            Body::Trees(_) => LossKind::CrossEntropy,
        }
    }
}

/// Accuracy, mean loss (hinge for SVC, cross-entropy otherwise) and
/// per-class precision/recall/F1.
pub fn evaluate(model: &Model, data: &LabeledDataset) -> EvalMetrics {
    let classes = model.num_classes();
    let scores = model.scores(&data.features);
    let predicted: Vec<usize> = scores.chunks_exact(classes).map(argmax).collect();
    let loss = if data.is_empty() {
        0.0
    } else {
        model.loss_kind().total(&scores, &data.labels, classes) / data.len() as f64
    };
    EvalMetrics::from_predictions(&predicted, &data.labels, classes, loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts() {
        let arch = ArchConfig::default();
        let count = |k| build_model(k, &arch, 0).unwrap().get_params().unwrap().len();
        assert_eq!(count(ModelKind::Mlp), 784 * 128 + 128 + 128 * 64 + 64 + 64 * 10 + 10);
        assert_eq!(count(ModelKind::Mlp), 109_386);
        assert_eq!(count(ModelKind::Mlr), 7_850);
        assert_eq!(count(ModelKind::Svc), 7_850);
    }

    #[test]
    fn unknown_kind_is_config_error() {
        assert!(matches!("rnn".parse::<ModelKind>(), Err(Error::Config(_))));
        assert_eq!("CNN".parse::<ModelKind>().unwrap(), ModelKind::Cnn);
    }

    #[test]
    fn zero_mlr_is_uniform() {
        let m = build_model(ModelKind::Mlr, &ArchConfig::default(), 0).unwrap();
        let mut s = m.scores(&vec![0.3; 784]);
        softmax_in_place(&mut s);
        assert!(s.iter().all(|p| (p - 0.1).abs() < 1e-12));
    }

    #[test]
    fn params_round_trip_preserves_outputs() {
        let arch = ArchConfig::default();
        let x: Vec<f64> = (0..2 * 784).map(|i| ((i * 13) % 17) as f64 / 17.0).collect();
        for kind in [ModelKind::Mlp, ModelKind::Cnn] {
            let mut m = build_model(kind, &arch, 5).unwrap();
            let before = m.scores(&x);
            let p = m.get_params().unwrap();
            m.set_params(&p).unwrap();
            assert_eq!(before, m.scores(&x));
            let mut other = build_model(kind, &arch, 6).unwrap();
            other.set_params(&p).unwrap();
            assert_eq!(before, other.scores(&x));
        }
    }

    #[test]
    fn mismatched_params_rejected() {
        let arch = ArchConfig::default();
        let mut mlr = build_model(ModelKind::Mlr, &arch, 0).unwrap();
        let mlp = build_model(ModelKind::Mlp, &arch, 0).unwrap();
        assert!(matches!(
            mlr.set_params(&mlp.get_params().unwrap()),
            Err(Error::Shape(_))
        ));
        let tree = build_model(ModelKind::Tree, &arch, 0).unwrap();
        assert!(tree.get_params().is_err());
    }

    #[test]
    fn bad_cnn_arch_is_config_error() {
        let arch = ArchConfig {
            image_side: 6,
            ..ArchConfig::default()
        };
        assert!(matches!(build_model(ModelKind::Cnn, &arch, 0), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_init() {
        let arch = ArchConfig::default();
        assert_eq!(
            build_model(ModelKind::Cnn, &arch, 3).unwrap(),
            build_model(ModelKind::Cnn, &arch, 3).unwrap()
        );
        assert_ne!(
            build_model(ModelKind::Cnn, &arch, 3).unwrap(),
            build_model(ModelKind::Cnn, &arch, 4).unwrap()
        );
    }
}
