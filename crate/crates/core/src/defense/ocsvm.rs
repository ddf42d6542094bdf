//! One-class SVM (Schölkopf dual, libsvm parameterization) with an RBF kernel.
//!
//! Solves `min ½ αᵀQα` subject to `0 ≤ α_i ≤ 1`, `Σα = ν·n` by SMO with
//! maximal-violating-pair selection. Decision value `f(x) = Σ α_i K(x_i, x) − ρ`.

const EPS: f64 = 1e-9;
const TAU: f64 = 1e-12;
const MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct OneClassSvm {
    support: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    rho: f64,
    gamma: f64,
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

impl OneClassSvm {
    pub(crate) fn fit(rows: &[Vec<f64>], nu: f64, gamma: f64) -> Self {
        let n = rows.len();
        let q: Vec<f64> = (0..n * n).map(|k| rbf(&rows[k / n], &rows[k % n], gamma)).collect();

        // libsvm start: the first floor(nu*n) multipliers at the bound, one fractional.
        let total = nu * n as f64;
        let whole = (total.floor() as usize).min(n);
        let mut alpha = vec![0.0; n];
        alpha[..whole].fill(1.0);
        if whole < n {
            alpha[whole] = total - whole as f64;
        }
        let mut grad: Vec<f64> = (0..n).map(|i| (0..n).map(|j| q[i * n + j] * alpha[j]).sum()).collect();

        for _ in 0..MAX_ITER {
            // i may grow (alpha < 1), j may shrink (alpha > 0)
            let mut i = usize::MAX;
            let mut j = usize::MAX;
            let mut best_up = f64::NEG_INFINITY;
            let mut best_low = f64::INFINITY;
            for t in 0..n {
                if alpha[t] < 1.0 && -grad[t] > best_up {
                    best_up = -grad[t];
                    i = t;
                }
                if alpha[t] > 0.0 && -grad[t] < best_low {
                    best_low = -grad[t];
                    j = t;
                }
            }
            if i == usize::MAX || j == usize::MAX || best_up - best_low < EPS {
                break;
            }
            let quad = (q[i * n + i] + q[j * n + j] - 2.0 * q[i * n + j]).max(TAU);
            let step = ((grad[j] - grad[i]) / quad).min(1.0 - alpha[i]).min(alpha[j]);
            alpha[i] += step;
            alpha[j] -= step;
            if alpha[j] < 1e-15 {
                alpha[j] = 0.0;
            }
            if alpha[i] > 1.0 - 1e-15 {
                alpha[i] = 1.0;
            }
            for t in 0..n {
                grad[t] += step * (q[t * n + i] - q[t * n + j]);
            }
        }

        let rho = Self::rho(&alpha, &grad);
        let keep: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0).collect();
        Self {
            support: keep.iter().map(|&t| rows[t].clone()).collect(),
            alpha: keep.iter().map(|&t| alpha[t]).collect(),
            rho,
            gamma,
        }
    }

    fn rho(alpha: &[f64], grad: &[f64]) -> f64 {
        let mut free_sum = 0.0;
        let mut free = 0usize;
        let mut ub = f64::INFINITY;
        let mut lb = f64::NEG_INFINITY;
        for (a, g) in alpha.iter().zip(grad) {
            if *a >= 1.0 {
                lb = lb.max(*g);
            } else if *a <= 0.0 {
                ub = ub.min(*g);
            } else {
                free_sum += g;
                free += 1;
            }
        }
        if free > 0 {
            free_sum / free as f64
        } else if ub.is_finite() && lb.is_finite() {
            (ub + lb) / 2.0
        } else if lb.is_finite() {
            lb
        } else {
            ub
        }
    }

    pub(crate) fn decision(&self, x: &[f64]) -> f64 {
        let s: f64 = self
            .support
            .iter()
            .zip(&self.alpha)
            .map(|(sv, a)| a * rbf(sv, x, self.gamma))
            .sum();
        s - self.rho
    }

    /// Negated decision value.
    pub(crate) fn score(&self, x: &[f64]) -> f64 {
        -self.decision(x)
    }
}
