use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub loss: f64,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalMetrics {
    /// Metrics from hard predictions; any zero denominator yields 0.
    pub fn from_predictions(predicted: &[usize], truth: &[usize], classes: usize, loss: f64) -> Self {
        assert_eq!(predicted.len(), truth.len());
        let mut tp = vec![0usize; classes];
        let mut pred_count = vec![0usize; classes];
        let mut true_count = vec![0usize; classes];
        for (&p, &t) in predicted.iter().zip(truth) {
            pred_count[p] += 1;
            true_count[t] += 1;
            if p == t {
                tp[p] += 1;
            }
        }
        let per_class = (0..classes)
            .map(|c| {
                let precision = ratio(tp[c], pred_count[c]);
                let recall = ratio(tp[c], true_count[c]);
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                ClassMetrics { precision, recall, f1 }
            })
            .collect();
        Self {
            accuracy: ratio(tp.iter().sum(), truth.len()),
            loss,
            per_class,
        }
    }

    fn macro_of(&self, f: impl Fn(&ClassMetrics) -> f64) -> f64 {
        if self.per_class.is_empty() {
            return 0.0;
        }
        self.per_class.iter().map(f).sum::<f64>() / self.per_class.len() as f64
    }

    pub fn macro_precision(&self) -> f64 {
        self.macro_of(|c| c.precision)
    }

    pub fn macro_recall(&self) -> f64 {
        self.macro_of(|c| c.recall)
    }

    pub fn macro_f1(&self) -> f64 {
        self.macro_of(|c| c.f1)
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
