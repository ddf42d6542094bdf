//! Minimum covariance determinant (simplified FastMCD) with a chi-square cut-off.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::index;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::rng;

const RIDGE: f64 = 1e-6;
const MAX_CSTEPS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct MinCovDet {
    location: DVector<f64>,
    /// Lower Cholesky factor of the covariance.
    l: DMatrix<f64>,
}

pub(crate) fn chi2_quantile(q: f64, dof: usize) -> Result<f64> {
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Config(format!("chi-square with {dof} dof: {e}")))?;
    Ok(dist.inverse_cdf(q))
}

struct Estimate {
    location: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

fn estimate(rows: &[Vec<f64>], subset: &[usize]) -> Estimate {
    let p = rows[0].len();
    let h = subset.len() as f64;
    let mut mean = DVector::zeros(p);
    for &i in subset {
        mean += DVector::from_column_slice(&rows[i]);
    }
    mean /= h;
    let mut cov = DMatrix::zeros(p, p);
    for &i in subset {
        let d = DVector::from_column_slice(&rows[i]) - &mean;
        cov.ger(1.0, &d, &d, 1.0);
    }
    cov /= h;
    factor(cov, mean)
}

fn factor(cov: DMatrix<f64>, location: DVector<f64>) -> Estimate {
    let p = cov.nrows();
    let chol = match Cholesky::new(cov.clone()) {
        Some(c) if c.l_dirty().diagonal().iter().all(|&d| d > RIDGE.sqrt() * 1e-3) => c,
        _ => {
            log::warn!("singular covariance in robust_covariance; adding ridge {RIDGE}");
            Cholesky::new(cov + DMatrix::identity(p, p) * RIDGE)
                .expect("ridge-regularized covariance is positive definite")
        }
    };
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Estimate {
        location,
        chol,
        log_det,
    }
}

fn mahalanobis2(e: &Estimate, x: &[f64]) -> f64 {
    let d = DVector::from_column_slice(x) - &e.location;
    let z = e
        .chol
        .l()
        .solve_lower_triangular(&d)
        .expect("cholesky factor is invertible");
    z.norm_squared()
}

fn smallest(d2: &[f64], h: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..d2.len()).collect();
    order.sort_by(|&a, &b| d2[a].total_cmp(&d2[b]).then(a.cmp(&b)));
    order.truncate(h);
    order.sort_unstable();
    order
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

impl MinCovDet {
    pub(crate) fn fit(rows: &[Vec<f64>], support_fraction: f64, starts: usize, seed: u64) -> Result<Self> {
        let n = rows.len();
        let p = rows[0].len();
        let h = ((support_fraction * n as f64).ceil() as usize).clamp(1, n);
        let mut rng = rng::stream(seed, "mcd", &[]);

        let mut best: Option<Estimate> = None;
        for _ in 0..starts {
            let mut subset = index::sample(&mut rng, n, h).into_vec();
            subset.sort_unstable();
            let mut est = estimate(rows, &subset);
            for _ in 0..MAX_CSTEPS {
                let d2: Vec<f64> = rows.iter().map(|r| mahalanobis2(&est, r)).collect();
                let next = smallest(&d2, h);
                if next == subset {
                    break;
                }
                let cand = estimate(rows, &next);
                if cand.log_det >= est.log_det - 1e-12 {
                    break;
                }
                subset = next;
                est = cand;
            }
            if best.as_ref().is_none_or(|b| est.log_det < b.log_det) {
                best = Some(est);
            }
        }
        let raw = best.expect("at least one start");

        // Consistency correction so squared distances match chi-square(p) at the median.
        let d2: Vec<f64> = rows.iter().map(|r| mahalanobis2(&raw, r)).collect();
        let scale = median(&d2) / chi2_quantile(0.5, p)?;
        let corrected = if scale > 0.0 && scale.is_finite() {
            let cov = raw.chol.l() * raw.chol.l().transpose() * scale;
            factor(cov, raw.location.clone())
        } else {
            raw
        };

        // One reweighting pass on the points inside the 0.975 ellipsoid.
        let cut = chi2_quantile(0.975, p)?;
        let inside: Vec<usize> = (0..n).filter(|&i| mahalanobis2(&corrected, &rows[i]) <= cut).collect();
        let fin = if inside.len() > 1 {
            estimate(rows, &inside)
        } else {
            corrected
        };
        Ok(Self {
            location: fin.location,
            l: fin.chol.l(),
        })
    }

    /// Squared Mahalanobis distance.
    pub(crate) fn score(&self, x: &[f64]) -> f64 {
        let d = DVector::from_column_slice(x) - &self.location;
        self.l
            .solve_lower_triangular(&d)
            .expect("cholesky factor is invertible")
            .norm_squared()
    }
}
