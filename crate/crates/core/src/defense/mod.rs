//! Aggregation-stage outlier detection over per-client evaluation reports.

mod corpus;
mod iforest;
mod lof;
mod mcd;
mod ocsvm;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use corpus::{read_corpus, write_corpus, CorpusRow};

use crate::aggregation::ClientUpdate;
use crate::error::{Error, Result};
use crate::models::{ClassMetrics, EvalMetrics};

/// One client's evaluation record for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientReport {
    pub client_id: usize,
    pub round: usize,
    pub per_class: Vec<ClassMetrics>,
    pub loss: f64,
}

impl ClientReport {
    pub fn from_metrics(client_id: usize, round: usize, metrics: &EvalMetrics) -> Self {
        Self {
            client_id,
            round,
            per_class: metrics.per_class.clone(),
            loss: metrics.loss,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }

    /// `[p.., r.., f.., loss]`.
    pub fn feature_row(&self) -> Vec<f64> {
        let mut row = Vec::with_capacity(3 * self.per_class.len() + 1);
        row.extend(self.per_class.iter().map(|m| m.precision));
        row.extend(self.per_class.iter().map(|m| m.recall));
        row.extend(self.per_class.iter().map(|m| m.f1));
        row.push(self.loss);
        row
    }
}

/// Row-major feature matrix, one row per client.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Vec<f64>,
    pub rows: usize,
    pub dims: usize,
    pub client_ids: Vec<usize>,
}

impl FeatureMatrix {
    pub fn new(values: Vec<f64>, rows: usize, dims: usize, client_ids: Vec<usize>) -> Result<Self> {
        if values.len() != rows * dims || client_ids.len() != rows {
            return Err(Error::Shape(format!(
                "{} values and {} ids for a {rows}x{dims} matrix",
                values.len(),
                client_ids.len()
            )));
        }
        Ok(Self {
            values,
            rows,
            dims,
            client_ids,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dims..(i + 1) * self.dims]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.values[i * self.dims + j]).collect()
    }

    fn set_column(&mut self, j: usize, col: &[f64]) {
        for (i, v) in col.iter().enumerate() {
            self.values[i * self.dims + j] = *v;
        }
    }

    pub fn select(&self, rows: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(rows.len() * self.dims);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            values,
            rows: rows.len(),
            dims: self.dims,
            client_ids: rows.iter().map(|&r| self.client_ids[r]).collect(),
        }
    }
}

/// Stacks reports into rows sorted by client id.
pub fn extract_features(reports: &[ClientReport]) -> Result<FeatureMatrix> {
    let classes = reports.first().map_or(0, ClientReport::num_classes);
    if let Some(bad) = reports.iter().find(|r| r.num_classes() != classes) {
        return Err(Error::Shape(format!(
            "client {} reports {} classes, expected {classes}",
            bad.client_id,
            bad.num_classes()
        )));
    }
    let mut order: Vec<&ClientReport> = reports.iter().collect();
    order.sort_by_key(|r| (r.client_id, r.round));
    let dims = 3 * classes + 1;
    let mut values = Vec::with_capacity(order.len() * dims);
    for r in &order {
        values.extend(r.feature_row());
    }
    FeatureMatrix::new(values, order.len(), dims, order.iter().map(|r| r.client_id).collect())
}

/// Column-wise average ranks mapped to `[0, 1]`; a single row maps to 0.5.
pub fn rank_normalize(m: &FeatureMatrix) -> FeatureMatrix {
    let mut out = m.clone();
    for j in 0..m.dims {
        let col = m.column(j);
        out.set_column(j, &ranks01(&col));
    }
    out
}

fn ranks01(col: &[f64]) -> Vec<f64> {
    let n = col.len();
    if n < 2 {
        return vec![0.5; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
    let mut out = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && col[order[end]] == col[order[start]] {
            end += 1;
        }
        // zero-based average rank of the tie block
        let rank = (start + end - 1) as f64 / 2.0;
        for &i in &order[start..end] {
            out[i] = rank / (n - 1) as f64;
        }
        start = end;
    }
    out
}

/// Column-wise `(x - min) / (max - min)`; constant columns map to 0.5.
pub fn minmax_normalize(m: &FeatureMatrix) -> FeatureMatrix {
    let mut out = m.clone();
    for j in 0..m.dims {
        let col = m.column(j);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scaled: Vec<f64> = if hi > lo {
            col.iter().map(|v| (v - lo) / (hi - lo)).collect()
        } else {
            vec![0.5; col.len()]
        };
        out.set_column(j, &scaled);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    Rank,
    MinMax,
}

impl Normalization {
    pub fn apply(&self, m: &FeatureMatrix) -> FeatureMatrix {
        match self {
            Normalization::Rank => rank_normalize(m),
            Normalization::MinMax => minmax_normalize(m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Ocsvm,
    IsolationForest,
    RobustCovariance,
    Lof,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 4] = [
        DetectorKind::Ocsvm,
        DetectorKind::IsolationForest,
        DetectorKind::RobustCovariance,
        DetectorKind::Lof,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DetectorKind::Ocsvm => "ocsvm",
            DetectorKind::IsolationForest => "isolation_forest",
            DetectorKind::RobustCovariance => "robust_covariance",
            DetectorKind::Lof => "lof",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "ocsvm" | "one_class_svm" => Ok(DetectorKind::Ocsvm),
            "isolation_forest" | "iforest" => Ok(DetectorKind::IsolationForest),
            "robust_covariance" | "mcd" | "elliptic_envelope" => Ok(DetectorKind::RobustCovariance),
            "lof" => Ok(DetectorKind::Lof),
            _ => Err(Error::Config(format!(
                "unknown detector '{s}' (expected ocsvm, isolation_forest, robust_covariance or lof)"
            ))),
        }
    }
}

/// Detector hyperparameters. Unused fields are ignored by other kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorParams {
    /// OCSVM `ν`. Large values make the decision function close to a
    /// kernel density, which copes with a tight cluster of attackers.
    pub nu: f64,
    /// RBF width; `None` means `1 / dims`.
    pub gamma: Option<f64>,
    /// Expected outlier fraction. Sets every threshold except MCD's; OCSVM
    /// flags at most `min(nu, contamination)` of its training rows.
    pub contamination: f64,
    pub trees: usize,
    pub max_samples: usize,
    /// MCD subset size as a fraction of rows.
    pub support_fraction: f64,
    pub mcd_starts: usize,
    /// Chi-square quantile used as the MCD cut-off.
    pub mcd_quantile: f64,
    pub neighbors: usize,
    pub seed: u64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            nu: 0.9,
            gamma: None,
            contamination: 0.25,
            trees: 100,
            max_samples: 256,
            support_fraction: 0.75,
            mcd_starts: 30,
            mcd_quantile: 0.975,
            neighbors: 10,
            seed: 0,
        }
    }
}

impl DetectorParams {
    /// Sets `contamination` to the expected malicious ratio.
    pub fn with_prior(mut self, ratio: f64) -> Self {
        self.contamination = ratio;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(Error::Config(format!("nu must lie in (0, 1], got {}", self.nu)));
        }
        if !(0.0..=0.5).contains(&self.contamination) {
            return Err(Error::Config(format!(
                "contamination must lie in [0, 0.5], got {}",
                self.contamination
            )));
        }
        if self.gamma.is_some_and(|g| !(g > 0.0)) {
            return Err(Error::Config("gamma must be positive".into()));
        }
        if self.trees == 0 || self.max_samples < 2 || self.neighbors == 0 || self.mcd_starts == 0 {
            return Err(Error::Config(
                "trees, neighbors and mcd_starts must be positive, max_samples at least 2".into(),
            ));
        }
        if !(self.support_fraction > 0.5 && self.support_fraction <= 1.0) {
            return Err(Error::Config("support_fraction must lie in (0.5, 1]".into()));
        }
        if !(self.mcd_quantile > 0.0 && self.mcd_quantile < 1.0) {
            return Err(Error::Config("mcd_quantile must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Fitted {
    Ocsvm(ocsvm::OneClassSvm),
    IsolationForest(iforest::IsolationForest),
    RobustCovariance(mcd::MinCovDet),
    Lof(lof::Lof),
}

/// A fitted detector: `score(x) > threshold` marks an outlier.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub kind: DetectorKind,
    pub dims: usize,
    pub threshold: f64,
    fitted: Fitted,
}

impl DetectorModel {
    /// Anomaly score; larger means more anomalous.
    pub fn score(&self, x: &[f64]) -> f64 {
        match &self.fitted {
            Fitted::Ocsvm(m) => m.score(x),
            Fitted::IsolationForest(m) => m.score(x),
            Fitted::RobustCovariance(m) => m.score(x),
            Fitted::Lof(m) => m.score(x),
        }
    }

    pub fn is_outlier(&self, x: &[f64]) -> bool {
        self.score(x) > self.threshold
    }
}

/// Rows sorted lexicographically so randomized fits ignore input order.
fn canonical(features: &FeatureMatrix) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = (0..features.rows).map(|i| features.row(i).to_vec()).collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    rows
}

/// Threshold that leaves `round(contamination * n)` of `scores` strictly above it.
fn contamination_threshold(scores: &[f64], contamination: f64) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let flagged = (contamination * sorted.len() as f64).round() as usize;
    match flagged {
        0 => sorted.first().copied().unwrap_or(f64::INFINITY),
        m if m >= sorted.len() => f64::NEG_INFINITY,
        m => sorted[m],
    }
}

pub fn fit_detector(kind: DetectorKind, features: &FeatureMatrix, params: &DetectorParams) -> Result<DetectorModel> {
    params.validate()?;
    if features.rows < 4 {
        return Err(Error::Config(format!(
            "detectors need at least 4 rows, got {}",
            features.rows
        )));
    }
    let rows = canonical(features);
    let dims = features.dims;
    let (fitted, threshold) = match kind {
        DetectorKind::Ocsvm => {
            let gamma = params.gamma.unwrap_or(1.0 / dims as f64);
            let m = ocsvm::OneClassSvm::fit(&rows, params.nu, gamma);
            let scores: Vec<f64> = rows.iter().map(|r| m.score(r)).collect();
            (
                Fitted::Ocsvm(m),
                contamination_threshold(&scores, params.nu.min(params.contamination)),
            )
        }
        DetectorKind::IsolationForest => {
            let m = iforest::IsolationForest::fit(&rows, params.trees, params.max_samples, params.seed);
            let scores: Vec<f64> = rows.iter().map(|r| m.score(r)).collect();
            (
                Fitted::IsolationForest(m),
                contamination_threshold(&scores, params.contamination),
            )
        }
        DetectorKind::RobustCovariance => {
            let m = mcd::MinCovDet::fit(&rows, params.support_fraction, params.mcd_starts, params.seed)?;
            let threshold = mcd::chi2_quantile(params.mcd_quantile, dims)?;
            (Fitted::RobustCovariance(m), threshold)
        }
        DetectorKind::Lof => {
            let m = lof::Lof::fit(&rows, params.neighbors);
            let scores: Vec<f64> = rows.iter().map(|r| m.score(r)).collect();
            (Fitted::Lof(m), contamination_threshold(&scores, params.contamination))
        }
    };
    Ok(DetectorModel {
        kind,
        dims,
        threshold,
        fitted,
    })
}

/// `true` marks an outlier, one entry per row.
pub fn predict_outliers(model: &DetectorModel, features: &FeatureMatrix) -> Result<Vec<bool>> {
    if features.rows > 0 && features.dims != model.dims {
        return Err(Error::Shape(format!(
            "detector was fitted on {} dims, got {}",
            model.dims, features.dims
        )));
    }
    Ok((0..features.rows).map(|i| model.is_outlier(features.row(i))).collect())
}

/// Outcome of screening one round's updates.
#[derive(Debug, Clone)]
pub struct Screening {
    pub accepted: Vec<ClientUpdate>,
    pub rejected: Vec<usize>,
}

/// Keeps the updates whose report rows the detector calls inliers.
pub fn filter_updates(
    updates: Vec<ClientUpdate>,
    model: &DetectorModel,
    normalization: Normalization,
) -> Result<Screening> {
    let reports: Vec<ClientReport> = updates.iter().map(|u| u.report.clone()).collect();
    let features = normalization.apply(&extract_features(&reports)?);
    let flags = predict_outliers(model, &features)?;
    let outliers: Vec<usize> = features
        .client_ids
        .iter()
        .zip(&flags)
        .filter(|(_, &f)| f)
        .map(|(&id, _)| id)
        .collect();
    let mut accepted = Vec::with_capacity(updates.len());
    let mut rejected = Vec::new();
    for u in updates {
        if outliers.contains(&u.client_id) {
            log::info!("round {}: rejected update from client {}", u.report.round, u.client_id);
            rejected.push(u.client_id);
        } else {
            accepted.push(u);
        }
    }
    rejected.sort_unstable();
    Ok(Screening { accepted, rejected })
}

/// Per-round unsupervised defense: fit on this round's reports, then filter them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DefenseConfig {
    pub kind: Option<DetectorKind>,
    pub normalization: Normalization,
    pub params: DetectorParams,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            kind: None,
            normalization: Normalization::Rank,
            params: DetectorParams::default(),
        }
    }
}

impl DefenseConfig {
    pub fn screen(&self, updates: Vec<ClientUpdate>, seed: u64) -> Result<Screening> {
        let Some(kind) = self.kind else {
            return Ok(Screening {
                accepted: updates,
                rejected: Vec::new(),
            });
        };
        if updates.len() < 4 {
            log::warn!("only {} updates this round; defense skipped", updates.len());
            return Ok(Screening {
                accepted: updates,
                rejected: Vec::new(),
            });
        }
        let reports: Vec<ClientReport> = updates.iter().map(|u| u.report.clone()).collect();
        let features = self.normalization.apply(&extract_features(&reports)?);
        let params = DetectorParams {
            seed,
            ..self.params.clone()
        };
        let model = fit_detector(kind, &features, &params)?;
        filter_updates(updates, &model, self.normalization)
    }
}

/// How `detect-eval` fits a detector on a labelled corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusProtocol {
    /// Seeded stratified half split. Fit on the honest rows of one half,
    /// place the threshold at the largest score among them, and score every
    /// row of the other half.
    #[default]
    Holdout,
    /// Fit on every row with the corpus malicious rate as prior; score the same rows.
    Unsupervised,
}

impl FromStr for CorpusProtocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "holdout" => Ok(CorpusProtocol::Holdout),
            "unsupervised" => Ok(CorpusProtocol::Unsupervised),
            _ => Err(Error::Config(format!(
                "unknown protocol '{s}' (expected holdout or unsupervised)"
            ))),
        }
    }
}

/// Detector accuracy on a labelled corpus. Features are normalized over the
/// whole corpus, in row order.
pub fn corpus_accuracy(
    rows: &[CorpusRow],
    kind: DetectorKind,
    normalization: Normalization,
    params: &DetectorParams,
    protocol: CorpusProtocol,
) -> Result<f64> {
    let classes = rows.first().map_or(0, |r| r.report.num_classes());
    if rows.iter().any(|r| r.report.num_classes() != classes) {
        return Err(Error::Shape("corpus rows disagree on the class count".into()));
    }
    let dims = 3 * classes + 1;
    let values = rows.iter().flat_map(|r| r.report.feature_row()).collect();
    let features = normalization.apply(&FeatureMatrix::new(
        values,
        rows.len(),
        dims,
        (0..rows.len()).collect(),
    )?);
    let truth: Vec<bool> = rows.iter().map(|r| r.is_malicious).collect();
    match protocol {
        CorpusProtocol::Unsupervised => {
            let rate = truth.iter().filter(|&&m| m).count() as f64 / truth.len().max(1) as f64;
            let model = fit_detector(kind, &features, &params.clone().with_prior(rate))?;
            Ok(score_detector(&predict_outliers(&model, &features)?, &truth))
        }
        CorpusProtocol::Holdout => {
            let mut rng = crate::rng::stream(params.seed, "corpus-split", &[]);
            let mut fit_rows = Vec::new();
            let mut test_rows = Vec::new();
            for class in [false, true] {
                let mut members: Vec<usize> = (0..rows.len()).filter(|&i| truth[i] == class).collect();
                rand::seq::SliceRandom::shuffle(members.as_mut_slice(), &mut rng);
                let half = members.len() / 2;
                if !class {
                    fit_rows.extend_from_slice(&members[..half]);
                }
                test_rows.extend_from_slice(&members[half..]);
            }
            fit_rows.sort_unstable();
            test_rows.sort_unstable();
            let fit = features.select(&fit_rows);
            let mut model = fit_detector(kind, &fit, params)?;
            let scores: Vec<f64> = (0..fit.rows).map(|i| model.score(fit.row(i))).collect();
            model.threshold = contamination_threshold(&scores, 0.0);
            let flags = predict_outliers(&model, &features.select(&test_rows))?;
            let expected: Vec<bool> = test_rows.iter().map(|&i| truth[i]).collect();
            Ok(score_detector(&flags, &expected))
        }
    }
}

/// Fraction of rows whose flag equals the truth (`true` = malicious).
pub fn score_detector(predictions: &[bool], truth: &[bool]) -> f64 {
    assert_eq!(predictions.len(), truth.len(), "prediction and truth lengths differ");
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predictions.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len() as f64
}
