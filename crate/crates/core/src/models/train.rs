use std::ops::Range;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::optim::Optimizer;
use super::{Model, ParamVector};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Coefficient on half the squared weight norm (biases are not penalized).
    pub l2_penalty: f64,
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.local_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("local_epochs and batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || self.l2_penalty < 0.0 {
            return Err(Error::Config(
                "learning_rate and l2_penalty must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Minibatches for one epoch: a seeded shuffle of `0..n` cut into chunks of
/// `batch_size` (the last chunk may be short).
pub fn batch_schedule(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "batches", &[epoch as u64]));
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// `spec.local_epochs` epochs of minibatch descent; returns the new parameters.
pub fn train_local(model: &mut Model, data: &LabeledDataset, spec: &TrainSpec, seed: u64) -> Result<ParamVector> {
    train_epochs(model, data, spec, seed, 0..spec.local_epochs)
}

/// Runs the given epoch indices only. Optimizer state starts fresh on every call.
pub fn train_epochs(
    model: &mut Model,
    data: &LabeledDataset,
    spec: &TrainSpec,
    seed: u64,
    epochs: Range<usize>,
) -> Result<ParamVector> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    let kind = model.kind();
    let net = model
        .network_mut()
        .ok_or_else(|| Error::Config(format!("{kind} models are grown with train_tree_round")))?;
    if data.dim != net.input_dim() || data.num_classes != net.num_classes() {
        return Err(Error::Shape(format!(
            "data is {}-dim/{}-class, model expects {}-dim/{}-class",
            data.dim,
            data.num_classes,
            net.input_dim(),
            net.num_classes()
        )));
    }
    let mut state = spec.optimizer.state(net.num_params());
    let mut grad = vec![0.0; net.num_params()];
    let mut xb = Vec::with_capacity(spec.batch_size * data.dim);
    let mut yb = Vec::with_capacity(spec.batch_size);
    for epoch in epochs {
        for (b, batch) in batch_schedule(data.len(), spec.batch_size, seed, epoch)
            .iter()
            .enumerate()
        {
            xb.clear();
            yb.clear();
            for &i in batch {
                xb.extend_from_slice(data.row(i));
                yb.push(data.labels[i]);
            }
            let loss = net.loss_and_grad(&xb, &yb, spec.l2_penalty, &mut grad);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: b, loss });
            }
            state.step(net.params_mut(), &grad, spec.learning_rate);
        }
    }
    model.get_params()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, softmax_in_place, ArchConfig, ModelKind};

    fn tiny_arch() -> ArchConfig {
        ArchConfig {
            image_side: 2,
            num_classes: 3,
            mlp_hidden: vec![4],
            ..ArchConfig::default()
        }
    }

    fn toy_data() -> LabeledDataset {
        let features = vec![0.5, -1.0, 0.25, 2.0, 1.0, 0.0, -0.5, 0.5, -1.0, 1.5, 0.0, 0.75];
        LabeledDataset::new(features, 4, vec![0, 2, 1], 3).unwrap()
    }

    fn sgd(lr: f64, epochs: usize, l2: f64) -> TrainSpec {
        TrainSpec {
            local_epochs: epochs,
            batch_size: 2,
            learning_rate: lr,
            optimizer: Optimizer::Sgd,
            l2_penalty: l2,
        }
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut m = build_model(ModelKind::Mlp, &tiny_arch(), 1).unwrap();
        let before = m.get_params().unwrap();
        let after = train_local(&mut m, &toy_data(), &sgd(0.0, 3, 0.1), 7).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn single_sample_mlr_step_matches_closed_form() {
        let arch = tiny_arch();
        let mut m = build_model(ModelKind::Mlr, &arch, 0).unwrap();
        // Start away from zero so the L2 term is visible.
        let start: Vec<f64> = (0..15).map(|i| (i as f64 - 7.0) * 0.1).collect();
        let layout = m.get_params().unwrap().layout;
        m.set_params(&ParamVector::new(start.clone(), layout).unwrap()).unwrap();
        let x = [0.5, -1.0, 0.25, 2.0];
        let y = 1;
        let data = LabeledDataset::new(x.to_vec(), 4, vec![y], 3).unwrap();
        let (lr, l2) = (0.1, 0.01);
        let after = train_local(&mut m, &data, &sgd(lr, 1, l2), 0).unwrap();

        // Hand oracle: W is 3x4 row-major, b follows.
        let w = &start[..12];
        let b = &start[12..];
        let mut z: Vec<f64> = (0..3)
            .map(|c| b[c] + (0..4).map(|j| w[c * 4 + j] * x[j]).sum::<f64>())
            .collect();
        softmax_in_place(&mut z);
        for c in 0..3 {
            let err = z[c] - if c == y { 1.0 } else { 0.0 };
            for j in 0..4 {
                let expect = w[c * 4 + j] - lr * (err * x[j] + l2 * w[c * 4 + j]);
                assert!((after.values[c * 4 + j] - expect).abs() < 1e-12);
            }
            assert!((after.values[12 + c] - (b[c] - lr * err)).abs() < 1e-12);
        }
    }

    #[test]
    fn chained_single_epochs_equal_two_epochs_for_plain_sgd() {
        let data = toy_data();
        let mut a = build_model(ModelKind::Mlp, &tiny_arch(), 2).unwrap();
        let mut b = a.clone();
        let both = train_local(&mut a, &data, &sgd(0.05, 2, 0.0), 3).unwrap();
        train_epochs(&mut b, &data, &sgd(0.05, 1, 0.0), 3, 0..1).unwrap();
        let chained = train_epochs(&mut b, &data, &sgd(0.05, 1, 0.0), 3, 1..2).unwrap();
        assert_eq!(both, chained);

        // Momentum state is reset between calls, so the paths diverge.
        let mom = TrainSpec {
            optimizer: Optimizer::SgdMomentum { momentum: 0.9 },
            ..sgd(0.05, 2, 0.0)
        };
        let mut c = build_model(ModelKind::Mlp, &tiny_arch(), 2).unwrap();
        let mut d = c.clone();
        let both = train_local(&mut c, &data, &mom, 3).unwrap();
        train_epochs(&mut d, &data, &mom, 3, 0..1).unwrap();
        let chained = train_epochs(&mut d, &data, &mom, 3, 1..2).unwrap();
        assert_ne!(both, chained);
    }

    #[test]
    fn deterministic_given_seed() {
        let data = toy_data();
        let spec = TrainSpec {
            optimizer: Optimizer::adam(),
            ..sgd(0.01, 3, 0.0)
        };
        let run = |seed| {
            let mut m = build_model(ModelKind::Mlp, &tiny_arch(), 4).unwrap();
            train_local(&mut m, &data, &spec, seed).unwrap()
        };
        assert_eq!(run(1).to_bytes(), run(1).to_bytes());
        assert_ne!(run(1), run(2));
    }

    #[test]
    fn divergence_is_reported() {
        let arch = tiny_arch();
        let mut m = build_model(ModelKind::Mlr, &arch, 0).unwrap();
        let layout = m.get_params().unwrap().layout;
        let mut values = vec![0.0; 15];
        values[0] = f64::NAN;
        m.set_params(&ParamVector::new(values, layout).unwrap()).unwrap();
        let err = train_local(&mut m, &toy_data(), &sgd(0.1, 1, 0.0), 0).unwrap_err();
        assert!(matches!(err, Error::Divergence { epoch: 0, batch: 0, .. }));
    }

    #[test]
    fn trees_are_rejected() {
        let mut m = build_model(ModelKind::Tree, &tiny_arch(), 0).unwrap();
        assert!(matches!(
            train_local(&mut m, &toy_data(), &sgd(0.1, 1, 0.0), 0),
            Err(Error::Config(_))
        ));
    }
}
