//! Output losses. Both take row-major scores (batch x classes) and write the
//! gradient of the *mean* batch loss into `grad`.

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// Softmax cross-entropy.
    CrossEntropy,
    /// One-vs-rest hinge summed over classes. `smoothing > 0` replaces the
    /// kink at margin 1 by a quadratic of that width (Huberized hinge).
    Hinge { smoothing: f64 },
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Per-class hinge value and its derivative with respect to the margin.
fn hinge(margin: f64, smoothing: f64) -> (f64, f64) {
    if margin >= 1.0 {
        (0.0, 0.0)
    } else if smoothing <= 0.0 || margin <= 1.0 - smoothing {
        (1.0 - margin - smoothing / 2.0, -1.0)
    } else {
        let gap = 1.0 - margin;
        (gap * gap / (2.0 * smoothing), -gap / smoothing)
    }
}

impl LossKind {
    /// Sum (not mean) of per-sample losses.
    pub fn total(&self, scores: &[f64], labels: &[usize], classes: usize) -> f64 {
        scores
            .chunks_exact(classes)
            .zip(labels)
            .map(|(row, &y)| self.sample(row, y))
            .sum()
    }

    pub fn sample(&self, row: &[f64], label: usize) -> f64 {
        match *self {
            LossKind::CrossEntropy => log_sum_exp(row) - row[label],
            LossKind::Hinge { smoothing } => row
                .iter()
                .enumerate()
                .map(|(c, &s)| hinge(if c == label { s } else { -s }, smoothing).0)
                .sum(),
        }
    }

    /// Mean loss over the batch; `grad` receives d(mean)/d(scores).
    pub fn mean_with_grad(&self, scores: &[f64], labels: &[usize], classes: usize, grad: &mut [f64]) -> f64 {
        let batch = labels.len() as f64;
        let mut total = 0.0;
        for ((row, g), &y) in scores
            .chunks_exact(classes)
            .zip(grad.chunks_exact_mut(classes))
            .zip(labels)
        {
            match *self {
                LossKind::CrossEntropy => {
                    total += log_sum_exp(row) - row[y];
                    g.copy_from_slice(row);
                    softmax_in_place(g);
                    g[y] -= 1.0;
                    g.iter_mut().for_each(|v| *v /= batch);
                }
                LossKind::Hinge { smoothing } => {
                    for (c, (&s, gv)) in row.iter().zip(g.iter_mut()).enumerate() {
                        let sign = if c == y { 1.0 } else { -1.0 };
                        let (value, dmargin) = hinge(sign * s, smoothing);
                        total += value;
                        *gv = sign * dmargin / batch;
                    }
                }
            }
        }
        total / batch
    }
}
